#include "tcfbsde/cash.hpp"

#include <cmath>

#include "tcfbsde/format.hpp"

namespace tcfbsde {

void CashSpec::validate() const {
  for (const double c : {mu1, mu2, beta1, beta2})
    require(std::isfinite(c) && c > 0.0, "cash coefficients mu1, mu2, beta1, beta2 must be positive");
  require(static_cast<bool>(sigma_t) && static_cast<bool>(eta_t) && static_cast<bool>(kappa),
          "cash spec needs sigma_t, eta_t and kappa");
  require(std::isfinite(x0), "cash x0 must be finite");
  require(std::isfinite(horizon) && horizon > 0.0, "cash horizon must be positive");
  require(std::isfinite(du) && du > 0.0, "cash du must be positive");
  require(control_set.dim() == 1, "cash control set must be one-dimensional");
  jump.validate();
  subordinator.validate();
  // kappa bounded on [0, T], sigma finite, probed on a grid
  for (int i = 0; i <= 100; ++i) {
    const double t = horizon * i / 100.0;
    require(std::isfinite(kappa(t)), "kappa is not bounded on [0, T] (t = " + format_double(t) + ")");
    require(std::isfinite(sigma_t(t)) && sigma_t(t) > 0.0, "sigma_t must be positive (t = " + format_double(t) + ")");
  }
}

CashSpec make_cash_spec(const CashParams& p) {
  CashSpec spec;
  spec.mu1 = p.mu1;
  spec.mu2 = p.mu2;
  spec.beta1 = p.beta1;
  spec.beta2 = p.beta2;
  spec.sigma_t = [s0 = p.sigma0, s1 = p.sigma1](double t) { return s0 + s1 * t; };
  spec.eta_t = [e0 = p.eta0, e1 = p.eta1](double t, double z) { return (e0 + e1 * t) * z; };
  spec.kappa = [k0 = p.kappa0, k1 = p.kappa1](double t) { return k0 + k1 * t; };
  // both mark laws are symmetric, so E_mark[z] = 0
  spec.eta_mark_mean = [](double) { return 0.0; };
  spec.x0 = p.x0;
  require(std::isfinite(p.control_bound) && p.control_bound > 0.0, "cash control bound must be positive");
  spec.control_set = ControlSet::box(constant(1, -p.control_bound), constant(1, p.control_bound));
  spec.validate();
  return spec;
}

ModelSpec build_cash_model(const CashSpec& spec) {
  spec.validate();
  ModelSpec model;
  model.name = "cash";
  model.dims = {1, 1, 1, 1};
  model.x0 = constant(1, spec.x0);
  const double mu1 = spec.mu1, mu2 = spec.mu2, beta1 = spec.beta1, beta2 = spec.beta2;
  const auto sigma_t = spec.sigma_t;
  const auto eta_t = spec.eta_t;
  const auto kappa = spec.kappa;
  model.f = [=](double, double, const Vec& x, const Vec& v) -> Vec { return constant(1, -mu1 * x(0) + beta1 * v(0)); };
  model.sigma = [=](double t1, double, const Vec&, const Vec& v) -> Mat { return Mat::Constant(1, 1, sigma_t(t1) * v(0)); };
  model.b = [=](double t1, double, const Vec&, const Vec& v, double z) -> Vec { return constant(1, eta_t(t1, z) * v(0)); };
  model.g = [=](double, double, const Vec& x, const Vec& y, const Mat&, const Vec&, const Vec& v) -> Vec {
    return constant(1, -mu1 * y(0) + mu2 * x(0) + beta2 * v(0));
  };
  model.phi = [](const Vec& x) -> Vec { return x; };
  model.l = [=](double t1, double, const Vec&, const Vec&, const Mat&, const Vec&, const Vec& v) {
    const double e = v(0) - kappa(t1);
    return 0.5 * e * e;
  };
  model.h = [](const Vec&) { return 0.0; };
  model.gamma = [](const Vec& y) { return -y(0); };
  model.control_set = spec.control_set;
  model.jumps = spec.jump;
  model.terminal_matrix = Mat::Identity(1, 1);
  model.flags.linear = true;
  model.flags.linear_terminal = true;
  model.flags.adjoint_deterministic = true;
  model.flags.additive_noise = true;
  model.flags.generator_uses_r = false;
  model.flags.cost_uses_r = false;
  model.lipschitz = mu1;

  const MarkQuadrature rule = spec.jump.quadrature();
  if (spec.eta_mark_mean) {
    const auto mean = spec.eta_mark_mean;
    model.b_mark_mean = [=](double t1, double, const Vec&, const Vec& v) -> Vec { return constant(1, mean(t1) * v(0)); };
  } else {
    model.b_mark_mean = [=](double t1, double, const Vec&, const Vec& v) -> Vec {
      double m = 0.0;
      for (std::size_t k = 0; k < rule.size(); ++k) m += rule.weights[k] * eta_t(t1, rule.nodes[k]);
      return constant(1, m * v(0));
    };
  }
  const double lambda = spec.jump.intensity;
  model.hamiltonian_grad_v = [=](const HamiltonianPoint& pt) -> Vec {
    double jump = 0.0;
    for (std::size_t k = 0; k < rule.size(); ++k)
      jump += rule.weights[k] * pt.R(0, static_cast<Eigen::Index>(k)) * eta_t(pt.t1, rule.nodes[k]);
    return constant(1, beta1 * pt.q(0) + sigma_t(pt.t1) * pt.k(0, 0) - lambda * beta2 * pt.p(0) + lambda * jump +
                           lambda * (pt.v(0) - kappa(pt.t1)));
  };
  model.validate();
  return model;
}

BundleSpec cash_bundle_spec(const CashSpec& spec) {
  BundleSpec b;
  b.subordinator = spec.subordinator;
  b.jumps = spec.jump;
  b.horizon = spec.horizon;
  b.du = spec.du;
  b.brownian_dim = 1;
  return b;
}

AdjointSolution cash_adjoints(const CashSpec& spec, const PathBundle& bundle) {
  const double lambda = spec.jump.intensity;
  const Clock clock = operational_clock(bundle.subordinator);
  const std::size_t steps = clock.steps();
  AdjointSolution adj;
  adj.clock = ClockKind::kOperational;
  adj.grid = clock.grid;
  adj.t1 = clock.t1;
  adj.t2 = clock.t2;
  adj.nodes = spec.jump.quadrature().size();
  adj.p.resize(steps + 1);
  adj.q.resize(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) adj.p[i] = constant(1, std::exp(-lambda * spec.mu1 * clock.t2[i]));
  adj.q[steps] = -adj.p[steps];
  for (std::size_t i = steps; i-- > 0;) {
    const double dE = clock.t2[i + 1] - clock.t2[i];
    adj.q[i] = constant(1, (adj.q[i + 1](0) - lambda * spec.mu2 * adj.p[i](0) * dE) / (1.0 + spec.mu1 * dE));
  }
  adj.k.assign(steps, Mat::Zero(1, 1));
  adj.R.assign(steps * adj.nodes, 0.0);
  return adj;
}

double cash_control_value(const CashSpec& spec, const AdjointSolution& adj, std::size_t i) {
  const std::size_t steps = adj.grid.size() - 1;
  require(i <= steps, "grid index out of range");
  const double lambda = spec.jump.intensity;
  const MarkQuadrature rule = spec.jump.quadrature();
  const double t = adj.t1[i];
  double k = 0.0, jump = 0.0;
  if (i < steps) {
    k = adj.k[i](0, 0);
    for (std::size_t n = 0; n < rule.size(); ++n)
      jump += rule.weights[n] * adj.R[i * adj.nodes + n] * spec.eta_t(t, rule.nodes[n]);
  }
  return spec.kappa(t) -
         (spec.beta1 * adj.q[i](0) + spec.sigma_t(t) * k - lambda * spec.beta2 * adj.p[i](0) + lambda * jump) / lambda;
}

ControlProcess cash_optimal_control(const CashSpec& spec, const AdjointSolution& adj) {
  const std::size_t steps = adj.grid.size() - 1;
  require(adj.p.size() == steps + 1 && adj.q.size() == steps + 1 && adj.k.size() == steps &&
              adj.R.size() == steps * adj.nodes && adj.t1.size() == steps + 1,
          "adjoint grid mismatch");
  require(spec.jump.quadrature().size() == adj.nodes, "adjoint quadrature does not match the jump spec");
  std::vector<double> times;
  std::vector<Vec> values;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = adj.t1[i];
    const Vec u = spec.control_set.admit(constant(1, cash_control_value(spec, adj, i)), 1e-9);
    // equal calendar times only come from a zero increment of D; keep the later row
    if (!times.empty() && times.back() == t) {
      values.back() = u;
      continue;
    }
    times.push_back(t);
    values.push_back(u);
  }
  return ControlProcess::open_loop(std::move(times), std::move(values));
}

ControlPolicy cash_optimal_policy(const CashSpec& spec) {
  return [spec](const PathBundle& bundle) { return cash_optimal_control(spec, cash_adjoints(spec, bundle)); };
}

AdjointProvider cash_adjoint_provider(const CashSpec& spec) {
  return [spec](const PathBundle& bundle, const EnsembleSolution& sol, const ConditionalEnsemble&) {
    AdjointEnsemble adj = broadcast(cash_adjoints(spec, bundle), sol.dims, sol.members);
    adj.clock = sol.clock;
    return adj;
  };
}

double cash_first_order_residual(const CashSpec& spec, const PathBundle& bundle) {
  const ModelSpec model = build_cash_model(spec);
  const MarkQuadrature rule = spec.jump.quadrature();
  const AdjointSolution adj = cash_adjoints(spec, bundle);
  const ControlProcess u = cash_optimal_control(spec, adj);
  const auto K = static_cast<Eigen::Index>(adj.nodes);
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < adj.grid.size(); ++i) {
    HamiltonianPoint pt;
    pt.t1 = adj.t1[i];
    pt.t2 = adj.t2[i];
    pt.x = zeros(1);
    pt.y = zeros(1);
    pt.a = Mat::Zero(1, 1);
    pt.r = Eigen::MatrixXd::Zero(1, K);
    pt.v = u(pt.t1, pt.t2, pt.x);
    pt.p = adj.p[i];
    pt.q = adj.q[i];
    pt.k = adj.k[i];
    pt.R = Eigen::Map<const Eigen::MatrixXd>(adj.R.data() + i * adj.nodes, 1, K);
    worst = std::max(worst, std::abs(hamiltonian_grad_v(model, rule, pt)(0)));
  }
  return worst;
}

ControlPolicy cash_benchmark_policy(const CashSpec& spec) {
  return fixed_policy(ControlProcess::feedback(
      [kappa = spec.kappa](double t1, double, const Vec&) -> Vec { return constant(1, kappa(t1)); }));
}

OptimalityReport certify_optimality(const CashSpec& spec, const std::vector<CandidatePolicy>& candidates,
                                    const CertifyOptions& options) {
  const ModelSpec model = build_cash_model(spec);
  const EnsemblePlan plan{cash_bundle_spec(spec), options.seed, options.ensemble};
  require(plan.size >= 1, "ensemble must be nonempty");

  std::vector<ControlPolicy> policies{cash_optimal_policy(spec)};
  for (const auto& c : candidates) policies.push_back(c.policy);
  const std::vector<CostEstimate> costs = evaluate_costs(model, policies, plan, options.solver);

  OptimalityReport report;
  report.model = "cash";
  report.master_seed = options.seed;
  report.ensemble = options.ensemble;
  report.inner_paths = options.solver.inner_paths;
  report.du = spec.du;
  report.horizon = spec.horizon;
  report.reference_cost = costs[0].mean;
  report.reference_se = costs[0].std_error;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<double> diff(plan.size);
    for (std::size_t i = 0; i < plan.size; ++i) diff[i] = costs[c + 1].per_path[i] - costs[0].per_path[i];
    const CostEstimate gap = summarize(std::move(diff));
    report.gap_table.push_back({candidates[c].label, costs[c + 1].mean, costs[c + 1].std_error, gap.mean, gap.std_error});
  }
  if (options.maxcond_candidates > 0) {
    const auto sampled = sample_candidates(model.control_set, options.maxcond_candidates,
                                           stream_seed(options.seed, 0, StreamPurpose::kCandidates), spec.horizon);
    report.margins = check_necessary_condition(model, cash_optimal_policy(spec), sampled, plan, options.solver,
                                               cash_adjoint_provider(spec));
  }
  bool gaps_ok = true;
  for (const auto& g : report.gap_table) gaps_ok = gaps_ok && g.gap >= -3.0 * g.gap_se;
  report.checks.push_back({"optimality_gaps", gaps_ok, "every gap >= -3 std_error", {}});
  if (report.margins) {
    const bool ok = report.margins->min_margin >= -3.0 * report.margins->std_error - 1e-10;
    report.checks.push_back({"necessary_condition", ok,
                             "min margin " + format_double(report.margins->min_margin) + " (witness " +
                                 report.margins->witness + ")",
                             {}});
  }
  return report;
}

}  // namespace tcfbsde
