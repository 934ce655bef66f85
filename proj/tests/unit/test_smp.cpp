#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "tcfbsde/smp.hpp"
#include "test_support.hpp"

using namespace tcfbsde;
using tcfbsde::testing::bundle_spec;
using tcfbsde::testing::default_cash;
using tcfbsde::testing::zero_model;

namespace {

HamiltonianPoint random_point(const ModelSpec& m, std::size_t nodes, Rng& rng) {
  HamiltonianPoint pt;
  pt.t1 = rng.uniform(0.0, 1.0);
  pt.t2 = rng.uniform(0.0, 1.0);
  const auto rv = [&](int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform(-2.0, 2.0);
    return v;
  };
  pt.x = rv(m.dims.n);
  pt.y = rv(m.dims.m);
  pt.a = Mat::Constant(m.dims.m, m.dims.d, rng.uniform(-1.0, 1.0));
  pt.r = Eigen::MatrixXd::Constant(m.dims.m, static_cast<Eigen::Index>(nodes), rng.uniform(-1.0, 1.0));
  pt.v = rv(m.dims.k);
  pt.p = rv(m.dims.m);
  pt.q = rv(m.dims.n);
  pt.k = Mat::Constant(m.dims.n, m.dims.d, rng.uniform(-1.0, 1.0));
  pt.R = Eigen::MatrixXd::Random(m.dims.n, static_cast<Eigen::Index>(nodes));
  return pt;
}

// Independent evaluation of <q,f> + <k,sigma> - lambda sum_k w_k (p g - l - R_k b_k) for the cash model.
double cash_hamiltonian(const CashSpec& s, const MarkQuadrature& rule, const HamiltonianPoint& pt) {
  const double lambda = s.jump.intensity;
  const double x = pt.x(0), y = pt.y(0), v = pt.v(0), p = pt.p(0), q = pt.q(0), k = pt.k(0, 0);
  double jump = 0.0;
  for (std::size_t j = 0; j < rule.size(); ++j)
    jump += rule.weights[j] * pt.R(0, static_cast<Eigen::Index>(j)) * s.eta_t(pt.t1, rule.nodes[j]) * v;
  const double kappa = s.kappa(pt.t1);
  return q * (-s.mu1 * x + s.beta1 * v) + k * s.sigma_t(pt.t1) * v -
         lambda * (p * (-s.mu1 * y + s.mu2 * x + s.beta2 * v) - 0.5 * (v - kappa) * (v - kappa)) + lambda * jump;
}

CashSpec unit_intensity_cash() {
  CashSpec s = default_cash();
  s.jump.intensity = 1.0;
  return s;
}

}  // namespace

TEST(Hamiltonian, ZeroAdjointsAndCost) {
  const ModelSpec m = builtin_model("linear_test", {{"qx", 0.0}, {"qv", 0.0}}, {1.0, 1.0});
  const auto rule = m.jumps.quadrature();
  Rng rng(1);
  HamiltonianPoint pt = random_point(m, rule.size(), rng);
  pt.p.setZero();
  pt.q.setZero();
  pt.k.setZero();
  pt.R.setZero();
  EXPECT_EQ(hamiltonian(m, rule, pt), 0.0);
}

TEST(Hamiltonian, CashMatchesReducedFormTermByTerm) {
  const CashSpec s = default_cash();
  const ModelSpec m = build_cash_model(s);
  const auto rule = m.jumps.quadrature();
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const HamiltonianPoint pt = random_point(m, rule.size(), rng);
    EXPECT_NEAR(hamiltonian(m, rule, pt), cash_hamiltonian(s, rule, pt), 1e-12);
  }
}

TEST(Hamiltonian, QuadraticInControlHasConstantCurvature) {
  const ModelSpec m = builtin_model("quadratic_drift", {}, {1.0, 1.0});
  const auto rule = m.jumps.quadrature();
  Rng rng(3);
  HamiltonianPoint pt = random_point(m, rule.size(), rng);
  const auto H = [&](double v) {
    pt.v = constant(1, v);
    return hamiltonian(m, rule, pt);
  };
  const double h = 0.1;
  const double c0 = (H(-1.0 + h) - 2.0 * H(-1.0) + H(-1.0 - h)) / (h * h);
  for (const double v : {-0.5, 0.0, 0.7, 1.5}) EXPECT_NEAR((H(v + h) - 2.0 * H(v) + H(v - h)) / (h * h), c0, 1e-8);
}

TEST(HamiltonianGrad, CashClosedFormMatchesFiniteDifferences) {
  const CashSpec s = default_cash();
  const ModelSpec m = build_cash_model(s);
  ASSERT_TRUE(static_cast<bool>(m.hamiltonian_grad_v));
  const auto rule = m.jumps.quadrature();
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const HamiltonianPoint pt = random_point(m, rule.size(), rng);
    const double closed = hamiltonian_grad_v(m, rule, pt)(0);
    const double fd = hamiltonian_grad_v(m, rule, pt, false)(0);
    EXPECT_NEAR(closed, fd, 1e-6);
    HamiltonianPoint up = pt;
    up.v(0) += 1e-4;
    HamiltonianPoint dn = pt;
    dn.v(0) -= 1e-4;
    EXPECT_NEAR(closed, (hamiltonian(m, rule, up) - hamiltonian(m, rule, dn)) / 2e-4, 1e-6);
  }
}

TEST(HamiltonianGrad, CashZeroAtBenchmarkAndLinearInControl) {
  const CashSpec s = default_cash();
  const ModelSpec m = build_cash_model(s);
  const auto rule = m.jumps.quadrature();
  Rng rng(5);
  HamiltonianPoint pt = random_point(m, rule.size(), rng);
  pt.p.setZero();
  pt.q.setZero();
  pt.k.setZero();
  pt.R.setZero();
  pt.v = constant(1, s.kappa(pt.t1));
  EXPECT_EQ(hamiltonian_grad_v(m, rule, pt)(0), 0.0);
  const HamiltonianPoint base = random_point(m, rule.size(), rng);
  HamiltonianPoint shifted = base;
  shifted.v(0) += 0.37;
  EXPECT_NEAR(hamiltonian_grad_v(m, rule, shifted)(0) - hamiltonian_grad_v(m, rule, base)(0),
              0.37 * s.jump.intensity, 1e-12);
}

TEST(Adjoint, ZeroGeneratorGivesConstantP) {
  ModelSpec m = zero_model();
  m.gamma = [](const Vec& y) { return 2.5 * y(0); };
  const PathBundle b = make_bundle(bundle_spec(m), 1, 0);
  const auto adj = solve_adjoint(m, ControlProcess::constant(zeros(1)), b);
  for (const auto& p : adj.p) EXPECT_NEAR(p(0), -2.5, 1e-9);
}

TEST(Adjoint, BoundaryConditionsOnLinearModel) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const ControlProcess u = ControlProcess::constant(constant(1, 0.5));
  for (std::size_t i = 0; i < 5; ++i) {
    const PathBundle b = make_bundle(bundle_spec(m), 2, i);
    const auto fwd = solve_forward_dual(m, u, b);
    const auto sol = solve_backward_dual(m, u, b, fwd);
    const auto adj = solve_adjoint(m, u, b);
    // gamma(y) = y^2 / 2, h(x) = x^2 / 2, phi(x) = x.
    EXPECT_NEAR(adj.p.front()(0) + sol.y.front()(0), 0.0, 1e-6);
    EXPECT_NEAR(adj.q.back()(0) + adj.p.back()(0) - sol.x.back()(0), 0.0, 1e-6);
  }
}

TEST(Adjoint, QSubstitutionOracle) {
  // Candidate q(tau) = (mu2/(2 mu1) - 1) e^{mu1 (tau - 2 E_T)} - (mu2/(2 mu1)) e^{-mu1 tau}
  // solves dq = (mu1 q + mu2 p) d tau, p = e^{-mu1 tau}, q(E_T) = -p(E_T): check by substitution.
  for (const auto& [mu1, mu2] : std::vector<std::pair<double, double>>{{1.0, 0.5}, {0.7, 1.4}, {2.0, 0.3}}) {
    const double ET = 1.3;
    const auto q = [mu1 = mu1, mu2 = mu2, ET](double t) {
      return (mu2 / (2 * mu1) - 1) * std::exp(mu1 * (t - 2 * ET)) - mu2 / (2 * mu1) * std::exp(-mu1 * t);
    };
    for (const double t : {0.0, 0.4, 0.9, 1.2}) {
      const double h = 1e-5;
      const double dq = (q(t + h) - q(t - h)) / (2 * h);
      EXPECT_NEAR(dq, mu1 * q(t) + mu2 * std::exp(-mu1 * t), 1e-8);
    }
    EXPECT_NEAR(q(ET), -std::exp(-mu1 * ET), 1e-14);
    if (mu2 == 2 * mu1) {
      for (const double t : {0.0, 0.5, 1.0}) EXPECT_NEAR(q(t), -std::exp(-mu1 * t), 1e-14);
    }
  }
}

TEST(Adjoint, CashUnitIntensityMatchesClosedForms) {
  const CashSpec s = unit_intensity_cash();
  const ModelSpec m = build_cash_model(s);
  const ControlPolicy policy = cash_optimal_policy(s);
  for (std::size_t i = 0; i < 5; ++i) {
    const PathBundle b = make_bundle(cash_bundle_spec(s), 3, i);
    const auto adj = solve_adjoint(m, policy(b), b);
    const double ET = adj.grid.back();
    for (std::size_t n = 0; n < adj.grid.size(); ++n) {
      const double tau = adj.grid[n];
      const double q = (s.mu2 / (2 * s.mu1) - 1) * std::exp(s.mu1 * (tau - 2 * ET)) -
                       s.mu2 / (2 * s.mu1) * std::exp(-s.mu1 * tau);
      EXPECT_NEAR(adj.p[n](0), std::exp(-s.mu1 * tau), 2.0 * s.du);
      EXPECT_NEAR(adj.q[n](0), q, 3.0 * s.du);
    }
    EXPECT_NEAR(adj.p.front()(0), 1.0, 1e-10);
  }
}

TEST(Variational, ZeroDirectionGivesZeroSolution) {
  const ModelSpec m = builtin_model("quadratic_drift", {}, {1.0, 1.0});
  const PathBundle b = make_bundle(bundle_spec(m), 1, 0);
  const ConditionalEnsemble ens = operational_ensemble(b, sample_members(b, 8));
  const auto base = solve_ensemble(m, ControlProcess::constant(constant(1, 0.5)), ens, {});
  const Linearization lin(m, base);
  const auto var = solve_variational(m, base, ens, lin, ControlProcess::constant(zeros(1)), {});
  for (const auto& x : var.x1) EXPECT_EQ(x(0), 0.0);
  for (const auto& y : var.y1) EXPECT_NEAR(y(0), 0.0, 1e-14);
}

TEST(Variational, LinearModelIsExactDifference) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const PathBundle b = make_bundle(bundle_spec(m), 1, 1);
  const ConditionalEnsemble ens = operational_ensemble(b, sample_members(b, 8));
  const ControlProcess u = ControlProcess::constant(constant(1, 0.5));
  const ControlProcess v = ControlProcess::constant(constant(1, 1.0));
  const auto base = solve_ensemble(m, u, ens, {});
  const Linearization lin(m, base);
  const auto var = solve_variational(m, base, ens, lin, v, {});
  for (const double rho : {1.0, 0.1}) {
    const auto bumped = solve_ensemble(m, u.shifted(v, rho), ens, {}, false);
    for (std::size_t i = 0; i < var.x1.size(); ++i)
      ASSERT_NEAR((bumped.x[i](0) - base.x[i](0)) / rho, var.x1[i](0), 1e-7);
  }
}

TEST(Variational, CashMatchesFiniteDifference) {
  const CashSpec s = default_cash();
  const ModelSpec m = build_cash_model(s);
  const PathBundle b = make_bundle(cash_bundle_spec(s), 1, 2);
  const ConditionalEnsemble ens = operational_ensemble(b, sample_members(b, 8));
  const ControlProcess u = cash_optimal_policy(s)(b);
  const ControlProcess v = ControlProcess::constant(constant(1, 1.0));
  const auto base = solve_ensemble(m, u, ens, {});
  const Linearization lin(m, base);
  const auto var = solve_variational(m, base, ens, lin, v, {});
  const auto bumped = solve_ensemble(m, u.shifted(v, 1e-4), ens, {}, false);
  for (std::size_t i = 0; i < var.x1.size(); ++i)
    ASSERT_NEAR((bumped.x[i](0) - base.x[i](0)) / 1e-4, var.x1[i](0), 1e-3);
  EXPECT_EQ(var.x1.front()(0), 0.0);
}

TEST(Remainders, LinearModelAtFloor) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const EnsemblePlan plan{bundle_spec(m), 3, 10};
  SolverConfig cfg;
  cfg.inner_paths = 8;
  const auto rows = remainder_convergence_check(m, fixed_policy(ControlProcess::constant(constant(1, 0.5))),
                                                ControlProcess::constant(constant(1, 1.0)), {0.2, 0.1}, plan, cfg);
  for (const auto& r : rows) EXPECT_LE(std::max({r.x, r.y, r.a, r.r}), 1e-12);
  EXPECT_THROW(remainder_convergence_check(m, fixed_policy(ControlProcess::constant(constant(1, 0.5))),
                                           ControlProcess::constant(constant(1, 1.0)), {0.0}, plan, cfg),
               Error);
}

TEST(Remainders, QuadraticDriftIsSecondOrder) {
  const ModelSpec m = builtin_model("quadratic_drift", {}, {1.0, 1.0});
  const EnsemblePlan plan{bundle_spec(m), 3, 10};
  SolverConfig cfg;
  cfg.inner_paths = 16;
  const auto rows = remainder_convergence_check(m, fixed_policy(ControlProcess::constant(constant(1, 0.5))),
                                                ControlProcess::constant(constant(1, 1.0)), {0.2, 0.1, 0.05}, plan, cfg);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double ratio = rows[i].x / rows[i + 1].x;
    EXPECT_GE(ratio, 2.5);
    EXPECT_LE(ratio, 6.0);
    EXPECT_LE(rows[i + 1].y, rows[i].y + std::max(rows[i].y_se, rows[i + 1].y_se));
  }
}

TEST(Gateaux, ZeroDirectionAndFirstOrderOnCash) {
  const CashSpec s = default_cash();
  const ModelSpec m = build_cash_model(s);
  const EnsemblePlan plan{cash_bundle_spec(s), 5, 40};
  const ControlPolicy u = cash_optimal_policy(s);
  const auto zero = gateaux_consistency_check(m, u, ControlProcess::constant(zeros(1)), {0.1}, plan, {});
  EXPECT_NEAR(zero[0].quotient, 0.0, 1e-12);
  EXPECT_NEAR(zero[0].linearized, 0.0, 1e-12);
  const auto rows = gateaux_consistency_check(m, u, ControlProcess::constant(constant(1, 1.0)),
                                              {0.2, 0.1, 0.05}, plan, {});
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const double ratio = rows[i].difference / rows[i + 1].difference;
    EXPECT_GE(ratio, 1.5);
    EXPECT_LE(ratio, 3.0);
  }
  // At the optimum the linearized cost change is nonnegative up to noise.
  EXPECT_GE(rows[0].linearized, -3.0 * rows[0].linearized_se - 1e-10);
}

TEST(Candidates, DeterministicAdmissibleAndLabelled) {
  const ControlSet box = ControlSet::box(constant(1, -2.0), constant(1, 3.0));
  const auto a = sample_candidates(box, 64, 9, 1.0);
  const auto b = sample_candidates(box, 64, 9, 1.0);
  ASSERT_EQ(a.size(), 64u);
  std::size_t piecewise = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    for (const double t : {0.0, 0.3, 0.6, 0.99}) {
      const Vec v = a[i].control(t, 0.0, zeros(1));
      EXPECT_TRUE(box.contains(v, 1e-12));
      EXPECT_EQ(v, b[i].control(t, 0.0, zeros(1)));
    }
    piecewise += a[i].label.rfind("piecewise", 0) == 0 ? 1 : 0;
  }
  EXPECT_GT(piecewise, 0u);
  EXPECT_LT(piecewise, a.size());
}

TEST(NecessaryCondition, IdentityCandidateHasZeroMargin) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const EnsemblePlan plan{bundle_spec(m), 2, 5};
  const ControlProcess u = ControlProcess::constant(constant(1, 0.5));
  SolverConfig cfg;
  cfg.inner_paths = 8;
  const auto rep = check_necessary_condition(m, fixed_policy(u), {{"u", u}}, plan, cfg);
  EXPECT_EQ(rep.rows.at(0).margin, 0.0);
  EXPECT_THROW(check_necessary_condition(m, fixed_policy(u), {}, plan, cfg), Error);
}

TEST(NecessaryCondition, CashOptimumAndPerturbedControl) {
  const CashSpec s = default_cash();
  const ModelSpec m = build_cash_model(s);
  const EnsemblePlan plan{cash_bundle_spec(s), 7, 100};
  const auto candidates = sample_candidates(s.control_set, 64, 3, s.horizon);
  const ControlPolicy opt = cash_optimal_policy(s);
  const auto at_opt = check_necessary_condition(m, opt, candidates, plan, {}, cash_adjoint_provider(s));
  EXPECT_GE(at_opt.min_margin, -3.0 * at_opt.std_error - 1e-10);
  const ControlPolicy off = shifted_policy(opt, ControlProcess::constant(constant(1, 1.0)), 0.5);
  const auto at_off = check_necessary_condition(m, off, candidates, plan, {}, cash_adjoint_provider(s));
  EXPECT_LT(at_off.min_margin, -3.0 * at_off.std_error);
}

TEST(Convexity, CashPassesAndNonConvexTerminalIsFlagged) {
  const ModelSpec cash = build_cash_model(default_cash());
  const auto rep = check_sufficient_condition_hypotheses(cash, {});
  EXPECT_TRUE(rep.passed());
  EXPECT_TRUE(rep.terminal_checked);
  EXPECT_GT(rep.tests, 0u);

  ModelSpec trivial = zero_model();
  EXPECT_EQ(check_sufficient_condition_hypotheses(trivial, {}).h_violations, 0u);

  ModelSpec bad = build_cash_model(default_cash());
  bad.h = [](const Vec& x) { return -x(0) * x(0); };
  const auto flagged = check_sufficient_condition_hypotheses(bad, {});
  EXPECT_GT(flagged.h_violations, 0u);
  EXPECT_FALSE(flagged.passed());
}
