#include <gtest/gtest.h>

#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

#include "fixtures.hpp"
#include "test_support.hpp"

using namespace tcfbsde;
using tcfbsde::testing::bundle_spec;
using tcfbsde::testing::default_cash;
using tcfbsde::testing::moments;
using tcfbsde::testing::within;
using tcfbsde::testing::zero_model;

namespace {

const ControlProcess kZero = ControlProcess::constant(zeros(1));

double max_abs_error(const FBSDESolution& s, const std::function<double(double)>& exact) {
  double worst = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) worst = std::max(worst, std::abs(s.x[i](0) - exact(s.grid[i])));
  return worst;
}

}  // namespace

TEST(ForwardDual, ZeroCoefficientsKeepInitialState) {
  const ModelSpec m = zero_model();
  const PathBundle b = make_bundle(bundle_spec(m), 1, 0);
  const auto s = solve_forward_dual(m, kZero, b);
  ASSERT_EQ(s.clock, ClockKind::kOperational);
  ASSERT_EQ(s.x.size(), b.steps() + 1);
  for (const auto& x : s.x) EXPECT_EQ(x(0), 1.0);
}

TEST(ForwardDual, LinearOdeFirstOrder) {
  ModelSpec m = zero_model();
  m.f = [](double, double, const Vec& x, const Vec&) -> Vec { return -x; };
  BundleSpec spec = bundle_spec(m, 0.005, 0.5);
  spec.alignment = 4;
  const PathBundle fine = make_bundle(spec, 4, 0);
  // Errors over the operational range shared by every coarsening.
  const double horizon = coarsen(fine, 4).subordinator.passage_time() - 0.02;
  double previous = 0.0;
  for (const std::size_t factor : {4, 2, 1}) {
    const auto s = solve_forward_dual(m, kZero, coarsen(fine, factor));
    double err = 0.0;
    for (std::size_t i = 0; i < s.x.size() && s.grid[i] <= horizon; ++i)
      err = std::max(err, std::abs(s.x[i](0) - std::exp(-s.grid[i])));
    const double du = 0.005 * static_cast<double>(factor);
    EXPECT_LE(err, du);
    if (previous > 0.0) {
      EXPECT_NEAR(previous / err, 2.0, 0.3);
    }
    previous = err;
  }
}

TEST(ForwardDual, CashWithZeroControlDecays) {
  const CashSpec spec = default_cash();
  const ModelSpec m = build_cash_model(spec);
  for (std::size_t i = 0; i < 5; ++i) {
    const PathBundle b = make_bundle(cash_bundle_spec(spec), 3, i);
    const double err =
        max_abs_error(solve_forward_dual(m, kZero, b), [&](double u) { return spec.x0 * std::exp(-spec.mu1 * u); });
    EXPECT_LE(err, spec.du);
  }
}

TEST(BackwardDual, ZeroGeneratorAndTerminal) {
  const ModelSpec m = zero_model();
  const PathBundle b = make_bundle(bundle_spec(m), 1, 2);
  const auto fwd = solve_forward_dual(m, kZero, b);
  const auto s = solve_backward_dual(m, kZero, b, fwd);
  ASSERT_TRUE(s.has_backward);
  for (const auto& y : s.y) EXPECT_EQ(y(0), 0.0);
  for (const auto& a : s.a) EXPECT_EQ(a(0, 0), 0.0);
  for (const double r : s.r) EXPECT_EQ(r, 0.0);
}

TEST(BackwardDual, ConstantGeneratorIntegratesDeterministically) {
  const double k0 = 0.7;
  for (const bool deterministic : {true, false}) {
    ModelSpec m = zero_model(1.0);
    m.g = [k0](double, double, const Vec&, const Vec&, const Mat&, const Vec&, const Vec&) -> Vec {
      return constant(1, k0);
    };
    m.flags.backward_deterministic = deterministic;
    const PathBundle b = make_bundle(bundle_spec(m), 1, 5);
    const auto s = solve_backward_dual(m, kZero, b, solve_forward_dual(m, kZero, b));
    const double ET = s.grid.back();
    for (std::size_t i = 0; i < s.y.size(); ++i) EXPECT_NEAR(s.y[i](0), k0 * (ET - s.grid[i]), 1e-9);
  }
}

TEST(BackwardDual, CashLinearSystemMatchesMatrixExponential) {
  const CashSpec spec = default_cash();
  const ModelSpec m = build_cash_model(spec);
  const double lambda = spec.jump.intensity;
  Eigen::Matrix2d M;
  M << -spec.mu1, 0.0, -lambda * spec.mu2, lambda * spec.mu1;
  for (std::size_t i = 0; i < 5; ++i) {
    const PathBundle b = make_bundle(cash_bundle_spec(spec), 6, i);
    const auto s = solve_backward_dual(m, kZero, b, solve_forward_dual(m, kZero, b));
    const double ET = s.grid.back();
    const double xT = spec.x0 * std::exp(-spec.mu1 * ET);
    const Eigen::Vector2d z0 = (-M * ET).exp() * Eigen::Vector2d(xT, xT);
    EXPECT_NEAR(z0(0), spec.x0, 1e-12);
    EXPECT_NEAR(s.y.front()(0), z0(1), 5.0 * spec.du);
    EXPECT_NEAR(s.y.back()(0), s.x.back()(0), 1e-10);  // terminal consistency
  }
}

TEST(BackwardDual, TerminalConsistencyInRegressionRegime) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const ControlProcess u = ControlProcess::constant(constant(1, 0.5));
  const PathBundle b = make_bundle(bundle_spec(m), 2, 0);
  const auto s = solve_backward_dual(m, u, b, solve_forward_dual(m, u, b));
  EXPECT_LE((s.y.back() - m.phi(s.x.back())).norm(), 1e-6);
}

TEST(ComposeDuality, IdentityStaircaseAndSynchronization) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const ControlProcess u = ControlProcess::constant(constant(1, 0.5));
  const PathBundle b = make_bundle(bundle_spec(m), 3, 1);
  const auto dual = solve_backward_dual(m, u, b, solve_forward_dual(m, u, b));
  // Identity-like staircase: D(u_i) = u_i, so E(t) = u_{i+1} on [u_i, u_{i+1}).
  InversePath id;
  for (std::size_t i = 0; i <= dual.steps(); ++i) {
    id.calendar_grid.push_back(i == 0 ? 0.0 : dual.grid[i - 1]);
    id.indices.push_back(i);
    id.values.push_back(dual.grid[i]);
  }
  const auto out = compose_duality(dual, id);
  for (std::size_t i = 0; i < out.x.size(); ++i) {
    EXPECT_EQ(out.x[i], dual.x[i]);
    EXPECT_EQ(out.y[i], dual.y[i]);
  }
  // Flat intervals of E: every component is constant.
  const auto grid = uniform_calendar_grid(1.0, 1001);
  const auto inv = invert_subordinator(b.subordinator, grid);
  const auto cal = compose_duality(dual, inv);
  ASSERT_EQ(cal.clock, ClockKind::kCalendar);
  for (std::size_t k = 1; k + 1 < grid.size(); ++k) {
    if (inv.indices[k] != inv.indices[k - 1]) continue;
    EXPECT_EQ(cal.x[k], cal.x[k - 1]);
    EXPECT_EQ(cal.y[k], cal.y[k - 1]);
    EXPECT_EQ(cal.a[k], cal.a[k - 1]);
  }
  InversePath too_long = inv;
  too_long.indices.back() = dual.steps() + 5;
  EXPECT_THROW(compose_duality(dual, too_long), Error);
}

TEST(Duality, RoundTripOnLinearAndCashModels) {
  const CashSpec cash = default_cash();
  const std::vector<std::pair<ModelSpec, ControlProcess>> cases{
      {builtin_model("linear_test", {}, {1.0, 1.0}), ControlProcess::constant(constant(1, 0.5))},
      {build_cash_model(cash), ControlProcess::constant(constant(1, 1.0))}};
  for (const auto& [model, control] : cases) {
    for (std::size_t i = 0; i < 10; ++i) {
      const PathBundle b = make_bundle(bundle_spec(model), 17, i);
      EXPECT_LE(duality_round_trip(model, control, b, {}).max(), 1e-8) << model.name << " path " << i;
    }
  }
}

TEST(Duality, InjectedFaultIsDetected) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const PathBundle b = make_bundle(bundle_spec(m), 17, 0);
  EXPECT_GT(duality_round_trip(m, ControlProcess::constant(constant(1, 0.5)), b, {}, true).max(), 1e-3);
}

TEST(Cost, ZeroCostsAndTerminalIdentity) {
  ModelSpec m = zero_model();
  const EnsemblePlan plan{bundle_spec(m), 1, 20};
  const auto zero = evaluate_cost(m, fixed_policy(kZero), plan, {});
  EXPECT_EQ(zero.mean, 0.0);
  m.h = [](const Vec& x) { return x(0); };
  m.x0 = constant(1, 1.7);
  const auto term = evaluate_cost(m, fixed_policy(kZero), plan, {});
  ASSERT_EQ(term.per_path.size(), 20u);
  for (const double c : term.per_path) EXPECT_DOUBLE_EQ(c, 1.7);
  EXPECT_NEAR(term.std_error, 0.0, 1e-12);
}

TEST(Cost, CashBenchmarkControlMatchesConditionalOde) {
  // The spec requires positive coefficients; 1e-12 stands in for zero.
  CashParams p;
  p.mu2 = 1e-12;
  p.beta2 = 1e-12;
  const CashSpec spec = make_cash_spec(p);
  const ModelSpec m = build_cash_model(spec);
  const double lambda = spec.jump.intensity;
  const EnsemblePlan plan{cash_bundle_spec(spec), 5, 30};
  const auto est = evaluate_cost(m, cash_benchmark_policy(spec), plan, {});
  // v = kappa = 1: no running cost, J = E[-Y0] with Y0 = exp(-lambda mu1 E_T) E[X(E_T) | D].
  std::vector<double> diff;
  for (std::size_t i = 0; i < plan.size; ++i) {
    const double ET = plan.bundle(i).subordinator.passage_time();
    const double mean_x = spec.beta1 / spec.mu1 + (spec.x0 - spec.beta1 / spec.mu1) * std::exp(-spec.mu1 * ET);
    diff.push_back(est.per_path[i] + std::exp(-lambda * spec.mu1 * ET) * mean_x);
  }
  const auto d = moments(diff);
  EXPECT_LE(std::abs(d.mean), 3.0 * d.std_error + 2.0 * spec.du) << d.mean << " +- " << d.std_error;
}

TEST(Gronwall, PerPathBoundOnLinearModel) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 2.0});
  for (std::size_t i = 0; i < 50; ++i) {
    const PathBundle b = make_bundle(bundle_spec(m), 8, i);
    EXPECT_LE(gronwall_ratio(m, ControlProcess::constant(constant(1, 0.3)), b, constant(1, 0.1)), 1.1);
  }
}

TEST(Forward, StrongSelfConvergence) {
  // Additive noise without jumps; the terminal gap to a fine reference halves with du.
  const ModelSpec m = builtin_model("linear_test", {{"e0", 0.0}, {"ev", 0.0}}, {1.0, 1.0});
  BundleSpec spec = bundle_spec(m, 0.02 / 16.0);
  spec.alignment = 16;
  const ControlProcess u = ControlProcess::feedback(
      [](double t1, double, const Vec&) -> Vec { return constant(1, std::sin(3.0 * t1)); });
  std::vector<std::vector<double>> gaps(3);
  for (std::size_t i = 0; i < 200; ++i) {
    const PathBundle fine = make_bundle(spec, 12, i);
    const auto ref = solve_forward_dual(m, u, fine);
    for (std::size_t l = 0; l < 3; ++l) {
      const std::size_t factor = std::size_t{8} >> l;  // du = 0.01, 0.005, 0.0025
      const PathBundle coarse = coarsen(fine, factor);
      const auto s = solve_forward_dual(m, u, coarse);
      // Compare at the last operational time shared by both grids.
      const std::size_t n = std::min(s.x.size() - 1, (ref.x.size() - 1) / factor);
      gaps[l].push_back(std::pow(s.x[n](0) - ref.x[n * factor](0), 2));
    }
  }
  const double r1 = std::sqrt(moments(gaps[1]).mean / moments(gaps[0]).mean);
  const double r2 = std::sqrt(moments(gaps[2]).mean / moments(gaps[1]).mean);
  EXPECT_GE(r1, 0.35);
  EXPECT_LE(r1, 0.65);
  EXPECT_GE(r2, 0.35);
  EXPECT_LE(r2, 0.65);
}

TEST(Ito, TrivialFields) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const PathBundle b = make_bundle(bundle_spec(m), 2, 3);
  const ControlProcess u = ControlProcess::constant(constant(1, 0.4));
  ScalarField t2;
  t2.value = [](double, double s, const Vec&) { return s; };
  EXPECT_NEAR(ito_terminal_residual(m, u, b, t2), 0.0, 1e-12);

  // F = x on a pure-drift model: the residual is the drift quadrature error only.
  ModelSpec drift = zero_model();
  drift.f = [](double t1, double, const Vec& x, const Vec&) -> Vec { return constant(1, std::cos(t1) - x(0)); };
  ScalarField id;
  id.value = [](double, double, const Vec& x) { return x(0); };
  const PathBundle bd = make_bundle(bundle_spec(drift), 2, 3);
  EXPECT_LE(std::abs(ito_terminal_residual(drift, kZero, bd, id)), 1e-10);
}

TEST(Ito, ResidualIsFirstOrderOnCash) {
  const CashSpec cash = default_cash();
  const ModelSpec m = build_cash_model(cash);
  const ControlPolicy u = cash_optimal_policy(cash);
  ScalarField F;
  F.value = [](double, double, const Vec& x) { return x.squaredNorm(); };
  BundleSpec fine = cash_bundle_spec(cash);
  fine.du /= 2.0;
  fine.alignment = 2;
  std::vector<double> coarse_res, fine_res;
  for (std::size_t i = 0; i < 300; ++i) {
    const PathBundle bf = make_bundle(fine, 1, i);
    const PathBundle bc = coarsen(bf, 2);
    const auto fd = sample_members(bf, 32);
    auto cd = fd;
    for (auto& d : cd) d.brownian = coarsen(d.brownian, 2);
    fine_res.push_back(ito_terminal_residual(m, u(bf), bf, fd, F));
    coarse_res.push_back(ito_terminal_residual(m, u(bc), bc, cd, F));
  }
  const double ratio = moments(fine_res).mean / moments(coarse_res).mean;
  EXPECT_GE(ratio, 0.35);
  EXPECT_LE(ratio, 0.7);
}

TEST(Independence, PermutedPairingKeepsCostDistribution) {
  const ModelSpec m = builtin_model("linear_test", {}, {1.0, 1.0});
  const BundleSpec spec = bundle_spec(m);
  const ControlPolicy u = fixed_policy(ControlProcess::constant(constant(1, 0.5)));
  std::vector<PathBundle> natural, permuted;
  const std::size_t n = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    natural.push_back(make_bundle(spec, 4, i));
    permuted.push_back(make_bundle(spec, 4, i, (i * 389 + 17) % n));
  }
  SolverConfig cfg;
  cfg.inner_paths = 8;
  const auto a = evaluate_cost(m, u, natural, cfg);
  const auto b = evaluate_cost(m, u, permuted, cfg);
  EXPECT_GT(ks_two_sample(a.per_path, b.per_path).p_value, 0.01);
}

TEST(KolmogorovSmirnov, DetectsShiftedSamples) {
  std::vector<double> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(i / 500.0);
    b.push_back(0.3 + i / 500.0);
  }
  EXPECT_LT(ks_two_sample(a, b).p_value, 1e-6);
  EXPECT_DOUBLE_EQ(ks_two_sample(a, a).statistic, 0.0);
}
