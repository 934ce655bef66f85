#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tcfbsde/cash.hpp"
#include "tcfbsde/commands.hpp"
#include "tcfbsde/config.hpp"
#include "tcfbsde/models.hpp"

namespace py = pybind11;
using namespace tcfbsde;

namespace {

ExperimentConfig config_from(const std::string& text) { return parse_config(nlohmann::json::parse(text)); }

py::dict inverse_path(double alpha, double scale, double horizon, double du, std::uint64_t seed, std::size_t points) {
  const SubordinatorSpec spec{alpha, scale};
  const SubordinatorPath path =
      sample_subordinator(spec, horizon, {du, horizon}, stream_seed(seed, 0, StreamPurpose::kSubordinator));
  const InversePath inv = invert_subordinator(path, uniform_calendar_grid(horizon, points));
  std::vector<double> u(path.values.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = path.grid.point(i);
  py::dict out;
  out["u"] = u;
  out["D"] = path.values;
  out["passage_time"] = path.passage_time();
  out["t"] = inv.calendar_grid;
  out["E"] = inv.values;
  return out;
}

CashParams cash_params(const py::dict& d) {
  CashParams p;
  const std::vector<std::pair<const char*, double*>> fields{
      {"mu1", &p.mu1},       {"mu2", &p.mu2},       {"beta1", &p.beta1},   {"beta2", &p.beta2},
      {"sigma0", &p.sigma0}, {"sigma1", &p.sigma1}, {"eta0", &p.eta0},     {"eta1", &p.eta1},
      {"kappa0", &p.kappa0}, {"kappa1", &p.kappa1}, {"x0", &p.x0},         {"control_bound", &p.control_bound}};
  for (const auto& item : d) {
    const auto key = item.first.cast<std::string>();
    bool known = false;
    for (const auto& [name, field] : fields) {
      if (key == name) {
        *field = item.second.cast<double>();
        known = true;
      }
    }
    if (!known) throw Error("unknown cash parameter '" + key + "'");
  }
  return p;
}

py::dict cash_adjoint_path(const py::dict& params, std::uint64_t seed, std::size_t index) {
  const CashSpec spec = make_cash_spec(cash_params(params));
  const PathBundle b = make_bundle(cash_bundle_spec(spec), seed, index);
  const AdjointSolution adj = cash_adjoints(spec, b);
  std::vector<double> p, q, control;
  for (std::size_t i = 0; i < adj.grid.size(); ++i) {
    p.push_back(adj.p[i](0));
    q.push_back(adj.q[i](0));
    control.push_back(cash_control_value(spec, adj, i));
  }
  py::dict out;
  out["u"] = adj.grid;
  out["D"] = adj.t1;
  out["p"] = p;
  out["q"] = q;
  out["control"] = control;
  out["first_order_residual"] = cash_first_order_residual(spec, b);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Time-changed Levy FBSDE solver and stochastic maximum principle checks";
  py::register_exception<Error>(m, "TcfbsdeError", PyExc_ValueError);

  m.attr("CONFIG_SCHEMA") = kConfigSchema;
  m.def("laplace_exponent", [](double alpha, double scale, double xi) { return laplace_exponent({alpha, scale}, xi); },
        py::arg("alpha"), py::arg("scale"), py::arg("xi"));
  m.def("inverse_path", &inverse_path, py::arg("alpha"), py::arg("scale") = 1.0, py::arg("horizon") = 1.0,
        py::arg("du") = 1e-2, py::arg("seed") = 1, py::arg("points") = 101);
  m.def("model_names", &builtin_model_names);
  m.def("fnv1a_hex", [](const py::bytes& data) { return fnv1a_hex(std::string(data)); });
  m.def("normalize_config", [](const std::string& text) { return to_json(config_from(text)).dump(); },
        "Parse a configuration strictly and return it with every default filled in.");
  m.def("simulate", [](const std::string& text) {
    const SimulateResult r = run_simulate(config_from(text));
    py::dict out;
    out["manifest"] = r.manifest_path;
    out["mean_passage"] = r.mean_passage;
    out["passage_se"] = r.passage_se;
    return out;
  });
  m.def("verify", [](const std::string& text) {
    const VerifyResult r = run_verify(config_from(text));
    return py::make_tuple(r.status, to_json(r.report).dump());
  });
  m.def("cash_demo", [](const std::string& text) { return to_json(run_cash_demo(config_from(text))).dump(); });
  m.def("cash_adjoint_path", &cash_adjoint_path, py::arg("params") = py::dict(), py::arg("seed") = 1,
        py::arg("index") = 0);
}
