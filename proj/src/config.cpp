#include "tcfbsde/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace tcfbsde {

namespace {

using nlohmann::json;

/// Reads the members of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    require(node_.is_object(), "config: '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& item : node_.items())
      require(seen_.count(item.key()) == 1, "config: unknown key '" + where(item.key()) + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }
  const json& at(const std::string& key) { return node_.at(key); }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    require(at(key).is_number(), "config: '" + where(key) + "' must be a number");
    out = at(key).get<double>();
    require(std::isfinite(out), "config: '" + where(key) + "' must be finite");
  }
  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (!has(key)) return;
    require(at(key).is_number_unsigned() || (at(key).is_number_integer() && at(key).get<long long>() >= 0),
            "config: '" + where(key) + "' must be a nonnegative integer");
    out = static_cast<Int>(at(key).get<std::uint64_t>());
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    require(at(key).is_boolean(), "config: '" + where(key) + "' must be a boolean");
    out = at(key).get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    require(at(key).is_string(), "config: '" + where(key) + "' must be a string");
    out = at(key).get<std::string>();
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string kind_name(CandidateSpec::Kind k) {
  switch (k) {
    case CandidateSpec::Kind::kConstant: return "constant";
    case CandidateSpec::Kind::kShift: return "shift";
    case CandidateSpec::Kind::kBenchmark: return "benchmark";
  }
  return "constant";
}

CandidateSpec::Kind kind_from(const std::string& s) {
  if (s == "constant") return CandidateSpec::Kind::kConstant;
  if (s == "shift") return CandidateSpec::Kind::kShift;
  if (s == "benchmark") return CandidateSpec::Kind::kBenchmark;
  throw Error("config: unknown candidate kind '" + s + "' (constant, shift, benchmark)");
}

}  // namespace

void ExperimentConfig::validate() const {
  subordinator.validate();
  jumps.validate();
  require(horizon > 0.0, "config: horizon must be positive");
  require(du > 0.0 && du < horizon, "config: du must be in (0, horizon)");
  require(calendar_points >= 2, "config: calendar_points must be at least 2");
  require(ensemble >= 1, "config: ensemble must be at least 1");
  require(solver.inner_paths >= 1, "config: inner_paths must be at least 1");
  require(solver.basis_degree >= 0 && solver.jump_basis >= 1, "config: regression basis sizes invalid");
  require(solver.ridge >= 0.0 && solver.control_tolerance > 0.0, "config: solver tolerances must be positive");
  require(solver.threads >= 1, "config: threads must be at least 1");
  require(!output.empty(), "config: output directory must be set");
  const Tolerances& t = tolerances;
  for (const double v : {t.duality, t.std_errors, t.gronwall_headroom, t.ito_ratio_lo, t.ito_ratio_hi, t.gateaux_ratio_lo,
                         t.gateaux_ratio_hi, t.remainder_ratio_lo, t.remainder_ratio_hi, t.remainder_floor,
                         t.maxcond_floor, t.ks_p_value})
    require(std::isfinite(v) && v > 0.0, "config: every tolerance must be positive");
  require(!verify.rhos.empty(), "config: verify.rhos must be nonempty");
  for (const double r : verify.rhos) require(r > 0.0, "config: every rho must be positive");
  require(verify.candidates >= 1, "config: verify.candidates must be at least 1");
  require(verify.gronwall_delta != 0.0, "config: gronwall_delta must be nonzero");
  // surfaces unknown model names and parameters
  builtin_model(model, params, jumps);
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");
  std::string schema;
  root.string("schema", schema);
  require(schema == kConfigSchema, std::string("config: 'schema' must be \"") + kConfigSchema + "\"");

  if (root.has("model")) {
    Section s(root.at("model"), "model");
    s.string("name", cfg.model);
    if (s.has("params")) {
      Section p(s.at("params"), "model.params");
      for (const auto& item : s.at("params").items()) {
        double v = 0.0;
        p.number(item.key(), v);
        cfg.params[item.key()] = v;
      }
    }
  }
  if (root.has("subordinator")) {
    Section s(root.at("subordinator"), "subordinator");
    s.number("alpha", cfg.subordinator.alpha);
    s.number("scale", cfg.subordinator.scale);
  }
  if (root.has("jumps")) {
    Section s(root.at("jumps"), "jumps");
    s.number("c", cfg.jumps.c);
    s.number("intensity", cfg.jumps.intensity);
    std::string law = to_string(cfg.jumps.mark_law);
    s.string("mark_law", law);
    cfg.jumps.mark_law = mark_law_from_string(law);
    s.integer("quadrature_order", cfg.jumps.quadrature_order);
  }
  if (root.has("grid")) {
    Section s(root.at("grid"), "grid");
    s.number("horizon", cfg.horizon);
    s.number("du", cfg.du);
    s.integer("calendar_points", cfg.calendar_points);
  }
  if (root.has("ensemble")) {
    Section s(root.at("ensemble"), "ensemble");
    s.integer("size", cfg.ensemble);
    s.integer("master_seed", cfg.master_seed);
    s.integer("inner_paths", cfg.solver.inner_paths);
    s.integer("threads", cfg.solver.threads);
  }
  if (root.has("solver")) {
    Section s(root.at("solver"), "solver");
    s.integer("basis_degree", cfg.solver.basis_degree);
    s.number("ridge", cfg.solver.ridge);
    s.integer("jump_basis", cfg.solver.jump_basis);
    s.number("control_tolerance", cfg.solver.control_tolerance);
  }
  root.string("output", cfg.output);
  if (root.has("checks")) {
    Section s(root.at("checks"), "checks");
    s.boolean("duality", cfg.checks.duality);
    s.boolean("gateaux", cfg.checks.gateaux);
    s.boolean("remainders", cfg.checks.remainders);
    s.boolean("maxcond", cfg.checks.maxcond);
    s.boolean("gronwall", cfg.checks.gronwall);
    s.boolean("ito", cfg.checks.ito);
    s.boolean("independence", cfg.checks.independence);
  }
  if (root.has("tolerances")) {
    Section s(root.at("tolerances"), "tolerances");
    Tolerances& t = cfg.tolerances;
    s.number("duality", t.duality);
    s.number("std_errors", t.std_errors);
    s.number("gronwall_headroom", t.gronwall_headroom);
    s.number("ito_ratio_lo", t.ito_ratio_lo);
    s.number("ito_ratio_hi", t.ito_ratio_hi);
    s.number("gateaux_ratio_lo", t.gateaux_ratio_lo);
    s.number("gateaux_ratio_hi", t.gateaux_ratio_hi);
    s.number("remainder_ratio_lo", t.remainder_ratio_lo);
    s.number("remainder_ratio_hi", t.remainder_ratio_hi);
    s.number("remainder_floor", t.remainder_floor);
    s.number("maxcond_floor", t.maxcond_floor);
    s.number("ks_p_value", t.ks_p_value);
  }
  if (root.has("verify")) {
    Section s(root.at("verify"), "verify");
    if (s.has("rhos")) {
      require(s.at("rhos").is_array(), "config: 'verify.rhos' must be an array");
      cfg.verify.rhos.clear();
      for (const auto& r : s.at("rhos")) {
        require(r.is_number(), "config: 'verify.rhos' must hold numbers");
        cfg.verify.rhos.push_back(r.get<double>());
      }
    }
    s.number("base_control", cfg.verify.base_control);
    s.number("direction", cfg.verify.direction);
    s.integer("candidates", cfg.verify.candidates);
    s.number("gronwall_delta", cfg.verify.gronwall_delta);
    s.boolean("inject_fault", cfg.verify.inject_fault);
  }
  if (root.has("cash_demo")) {
    Section s(root.at("cash_demo"), "cash_demo");
    if (s.has("candidates")) {
      require(s.at("candidates").is_array(), "config: 'cash_demo.candidates' must be an array");
      cfg.cash_demo.candidates.clear();
      for (const auto& node : s.at("candidates")) {
        Section c(node, "cash_demo.candidates[]");
        CandidateSpec spec;
        std::string kind = "constant";
        c.string("label", spec.label);
        c.string("kind", kind);
        c.number("value", spec.value);
        spec.kind = kind_from(kind);
        require(!spec.label.empty(), "config: every cash_demo candidate needs a label");
        cfg.cash_demo.candidates.push_back(spec);
      }
    }
    s.integer("export_paths", cfg.cash_demo.export_paths);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json params = json::object();
  for (const auto& [k, v] : c.params) params[k] = v;
  json candidates = json::array();
  for (const auto& cand : c.cash_demo.candidates)
    candidates.push_back({{"label", cand.label}, {"kind", kind_name(cand.kind)}, {"value", cand.value}});
  const Tolerances& t = c.tolerances;
  return {
      {"schema", kConfigSchema},
      {"model", {{"name", c.model}, {"params", params}}},
      {"subordinator", {{"alpha", c.subordinator.alpha}, {"scale", c.subordinator.scale}}},
      {"jumps",
       {{"c", c.jumps.c},
        {"intensity", c.jumps.intensity},
        {"mark_law", to_string(c.jumps.mark_law)},
        {"quadrature_order", c.jumps.quadrature_order}}},
      {"grid", {{"horizon", c.horizon}, {"du", c.du}, {"calendar_points", c.calendar_points}}},
      {"ensemble",
       {{"size", c.ensemble},
        {"master_seed", c.master_seed},
        {"inner_paths", c.solver.inner_paths},
        {"threads", c.solver.threads}}},
      {"solver",
       {{"basis_degree", c.solver.basis_degree},
        {"ridge", c.solver.ridge},
        {"jump_basis", c.solver.jump_basis},
        {"control_tolerance", c.solver.control_tolerance}}},
      {"output", c.output},
      {"checks",
       {{"duality", c.checks.duality},
        {"gateaux", c.checks.gateaux},
        {"remainders", c.checks.remainders},
        {"maxcond", c.checks.maxcond},
        {"gronwall", c.checks.gronwall},
        {"ito", c.checks.ito},
        {"independence", c.checks.independence}}},
      {"tolerances",
       {{"duality", t.duality},
        {"std_errors", t.std_errors},
        {"gronwall_headroom", t.gronwall_headroom},
        {"ito_ratio_lo", t.ito_ratio_lo},
        {"ito_ratio_hi", t.ito_ratio_hi},
        {"gateaux_ratio_lo", t.gateaux_ratio_lo},
        {"gateaux_ratio_hi", t.gateaux_ratio_hi},
        {"remainder_ratio_lo", t.remainder_ratio_lo},
        {"remainder_ratio_hi", t.remainder_ratio_hi},
        {"remainder_floor", t.remainder_floor},
        {"maxcond_floor", t.maxcond_floor},
        {"ks_p_value", t.ks_p_value}}},
      {"verify",
       {{"rhos", c.verify.rhos},
        {"base_control", c.verify.base_control},
        {"direction", c.verify.direction},
        {"candidates", c.verify.candidates},
        {"gronwall_delta", c.verify.gronwall_delta},
        {"inject_fault", c.verify.inject_fault}}},
      {"cash_demo", {{"candidates", candidates}, {"export_paths", c.cash_demo.export_paths}}},
  };
}

ModelSpec make_model(const ExperimentConfig& c) { return builtin_model(c.model, c.params, c.jumps); }

CashSpec make_cash(const ExperimentConfig& c) {
  require(c.model == "cash", "config: model must be 'cash' for the cash demo");
  CashSpec spec = make_cash_spec(cash_params(c.params));
  spec.jump = c.jumps;
  spec.subordinator = c.subordinator;
  spec.horizon = c.horizon;
  spec.du = c.du;
  spec.validate();
  return spec;
}

BundleSpec make_bundle_spec(const ExperimentConfig& c) {
  BundleSpec b;
  b.subordinator = c.subordinator;
  b.jumps = c.jumps;
  b.horizon = c.horizon;
  b.du = c.du;
  b.brownian_dim = make_model(c).dims.d;
  b.validate();
  return b;
}

}  // namespace tcfbsde
