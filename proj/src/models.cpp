#include "tcfbsde/models.hpp"

#include <cmath>

namespace tcfbsde {

namespace {

const ParamTable kLinearDefaults = {
    {"a", 1.0},   {"beta", 1.0}, {"f0", 0.1},  {"s0", 0.3},  {"sv", 0.2},  {"e0", 0.1},    {"ev", 0.1},
    {"gx", 0.5},  {"gy", -0.5},  {"ga", 0.2},  {"gr", 0.1},  {"gv", 0.3},  {"mT", 1.0},    {"qx", 1.0},
    {"qv", 1.0},  {"hx", 1.0},   {"gam", 1.0}, {"x0", 1.0},  {"bound", 5.0}};

const ParamTable kQuadraticDefaults = {
    {"a", 1.0},  {"beta", 1.0}, {"eps", 0.5}, {"s0", 0.2},  {"s1", 0.1}, {"e0", 0.1}, {"e1", 0.1},
    {"gx", 0.5}, {"gy", -0.5},  {"ga", 0.2},  {"gr", 0.1},  {"gv", 0.3}, {"qx", 1.0}, {"hx", 1.0},
    {"x0", 1.0}, {"bound", 5.0}};

ParamTable cash_defaults() {
  const CashParams p;
  return {{"mu1", p.mu1},       {"mu2", p.mu2},       {"beta1", p.beta1},   {"beta2", p.beta2},
          {"sigma0", p.sigma0}, {"sigma1", p.sigma1}, {"eta0", p.eta0},     {"eta1", p.eta1},
          {"kappa0", p.kappa0}, {"kappa1", p.kappa1}, {"x0", p.x0},         {"bound", p.control_bound}};
}

ParamTable merged(const std::string& model, const ParamTable& defaults, const ParamTable& params) {
  ParamTable out = defaults;
  for (const auto& [key, value] : params) {
    require(defaults.count(key) == 1, "unknown parameter '" + key + "' for model " + model);
    require(std::isfinite(value), "parameter '" + key + "' must be finite");
    out[key] = value;
  }
  return out;
}

ControlSet symmetric_box(double bound) {
  require(bound > 0.0, "control bound must be positive");
  return ControlSet::box(constant(1, -bound), constant(1, bound));
}

}  // namespace

ModelSpec linear_test_model(const ParamTable& params, const LevyJumpSpec& jumps) {
  const ParamTable p = merged("linear_test", kLinearDefaults, params);
  const double a = p.at("a"), beta = p.at("beta"), f0 = p.at("f0"), s0 = p.at("s0"), sv = p.at("sv");
  const double e0 = p.at("e0"), ev = p.at("ev"), gx = p.at("gx"), gy = p.at("gy"), ga = p.at("ga");
  const double gr = p.at("gr"), gv = p.at("gv"), mT = p.at("mT"), qx = p.at("qx"), qv = p.at("qv");
  const double hx = p.at("hx"), gam = p.at("gam");
  ModelSpec m;
  m.name = "linear_test";
  m.dims = {1, 1, 1, 1};
  m.x0 = constant(1, p.at("x0"));
  m.f = [=](double, double, const Vec& x, const Vec& v) -> Vec { return constant(1, -a * x(0) + beta * v(0) + f0); };
  m.sigma = [=](double, double, const Vec&, const Vec& v) -> Mat { return Mat::Constant(1, 1, s0 + sv * v(0)); };
  m.b = [=](double, double, const Vec&, const Vec& v, double z) -> Vec { return constant(1, (e0 + ev * v(0)) * z); };
  m.g = [=](double, double, const Vec& x, const Vec& y, const Mat& aa, const Vec& r, const Vec& v) -> Vec {
    return constant(1, gx * x(0) + gy * y(0) + ga * aa(0, 0) + gr * r(0) + gv * v(0));
  };
  m.phi = [=](const Vec& x) -> Vec { return constant(1, mT * x(0)); };
  m.l = [=](double, double, const Vec& x, const Vec&, const Mat&, const Vec&, const Vec& v) {
    return 0.5 * (qx * x(0) * x(0) + qv * v(0) * v(0));
  };
  m.h = [=](const Vec& x) { return 0.5 * hx * x(0) * x(0); };
  m.gamma = [=](const Vec& y) { return 0.5 * gam * y(0) * y(0); };
  m.control_set = symmetric_box(p.at("bound"));
  m.jumps = jumps;
  m.terminal_matrix = Mat::Constant(1, 1, mT);
  m.flags.linear = true;
  m.flags.linear_terminal = true;
  m.flags.additive_noise = true;
  // g is affine in r, so its mark integral only needs the mark mean of r
  m.flags.generator_uses_r = false;
  m.flags.cost_uses_r = false;
  m.lipschitz = std::abs(a);
  const MarkQuadrature rule = jumps.quadrature();
  double zmean = 0.0;
  for (std::size_t k = 0; k < rule.size(); ++k) zmean += rule.weights[k] * rule.nodes[k];
  m.b_mark_mean = [=](double, double, const Vec&, const Vec& v) -> Vec { return constant(1, (e0 + ev * v(0)) * zmean); };
  m.validate();
  return m;
}

ModelSpec quadratic_drift_model(const ParamTable& params, const LevyJumpSpec& jumps) {
  const ParamTable p = merged("quadratic_drift", kQuadraticDefaults, params);
  const double a = p.at("a"), beta = p.at("beta"), eps = p.at("eps"), s0 = p.at("s0"), s1 = p.at("s1");
  const double e0 = p.at("e0"), e1 = p.at("e1"), gx = p.at("gx"), gy = p.at("gy"), ga = p.at("ga");
  const double gr = p.at("gr"), gv = p.at("gv"), qx = p.at("qx"), hx = p.at("hx");
  ModelSpec m;
  m.name = "quadratic_drift";
  m.dims = {1, 1, 1, 1};
  m.x0 = constant(1, p.at("x0"));
  m.f = [=](double, double, const Vec& x, const Vec& v) -> Vec {
    return constant(1, -a * x(0) + beta * v(0) + eps * v(0) * v(0));
  };
  m.sigma = [=](double, double, const Vec& x, const Vec&) -> Mat { return Mat::Constant(1, 1, s0 + s1 * x(0)); };
  m.b = [=](double, double, const Vec& x, const Vec&, double z) -> Vec { return constant(1, (e0 + e1 * x(0)) * z); };
  m.g = [=](double, double, const Vec& x, const Vec& y, const Mat& aa, const Vec& r, const Vec& v) -> Vec {
    return constant(1, gx * x(0) + gy * y(0) + ga * aa(0, 0) + gr * r(0) + gv * v(0));
  };
  m.phi = [](const Vec& x) -> Vec { return x; };
  m.l = [=](double, double, const Vec& x, const Vec&, const Mat&, const Vec&, const Vec& v) {
    return 0.5 * (v(0) * v(0) + qx * x(0) * x(0));
  };
  m.h = [=](const Vec& x) { return 0.5 * hx * x(0) * x(0); };
  m.gamma = [](const Vec& y) { return 0.5 * y(0) * y(0); };
  m.control_set = symmetric_box(p.at("bound"));
  m.jumps = jumps;
  m.terminal_matrix = Mat::Identity(1, 1);
  m.flags.linear_terminal = true;
  m.flags.generator_uses_r = false;
  m.flags.cost_uses_r = false;
  m.lipschitz = std::abs(a) + std::abs(s1) + std::abs(e1) * jumps.c;
  const MarkQuadrature rule = jumps.quadrature();
  double zmean = 0.0;
  for (std::size_t k = 0; k < rule.size(); ++k) zmean += rule.weights[k] * rule.nodes[k];
  m.b_mark_mean = [=](double, double, const Vec& x, const Vec&) -> Vec { return constant(1, (e0 + e1 * x(0)) * zmean); };
  m.validate();
  return m;
}

CashParams cash_params(const ParamTable& params) {
  const ParamTable p = merged("cash", cash_defaults(), params);
  CashParams c;
  c.mu1 = p.at("mu1");
  c.mu2 = p.at("mu2");
  c.beta1 = p.at("beta1");
  c.beta2 = p.at("beta2");
  c.sigma0 = p.at("sigma0");
  c.sigma1 = p.at("sigma1");
  c.eta0 = p.at("eta0");
  c.eta1 = p.at("eta1");
  c.kappa0 = p.at("kappa0");
  c.kappa1 = p.at("kappa1");
  c.x0 = p.at("x0");
  c.control_bound = p.at("bound");
  return c;
}

ModelSpec builtin_model(const std::string& name, const ParamTable& params, const LevyJumpSpec& jumps) {
  if (name == "linear_test") return linear_test_model(params, jumps);
  if (name == "quadratic_drift") return quadratic_drift_model(params, jumps);
  if (name == "cash") {
    CashSpec spec = make_cash_spec(cash_params(params));
    spec.jump = jumps;
    return build_cash_model(spec);
  }
  throw Error("unknown model '" + name + "'");
}

std::vector<std::string> builtin_model_names() { return {"cash", "linear_test", "quadratic_drift"}; }

ParamTable builtin_defaults(const std::string& name) {
  if (name == "linear_test") return kLinearDefaults;
  if (name == "quadratic_drift") return kQuadraticDefaults;
  if (name == "cash") return cash_defaults();
  throw Error("unknown model '" + name + "'");
}

}  // namespace tcfbsde
