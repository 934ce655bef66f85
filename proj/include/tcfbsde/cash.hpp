#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tcfbsde/report.hpp"
#include "tcfbsde/smp.hpp"

namespace tcfbsde {

/// Parametric coefficients of the cash model:
/// sigma_t = sigma0 + sigma1 t, eta_t(z) = (eta0 + eta1 t) z, kappa(t) = kappa0 + kappa1 t.
struct CashParams {
  double mu1 = 1.0, mu2 = 0.5, beta1 = 1.0, beta2 = 0.5;
  double sigma0 = 0.2, sigma1 = 0.0;
  double eta0 = 0.1, eta1 = 0.0;
  double kappa0 = 1.0, kappa1 = 0.0;
  double x0 = 1.0;
  double control_bound = 5.0;  // U = [-bound, bound]
};

struct CashSpec {
  double mu1 = 1.0, mu2 = 0.5, beta1 = 1.0, beta2 = 0.5;
  std::function<double(double)> sigma_t;
  std::function<double(double, double)> eta_t;  // (t, z)
  std::function<double(double)> kappa;
  std::function<double(double)> eta_mark_mean;  // optional closed form of E_mark[eta_t(z)]
  double x0 = 1.0;
  LevyJumpSpec jump{1.0, 2.0};
  SubordinatorSpec subordinator{0.7, 1.0};
  double horizon = 1.0;
  double du = 1e-2;
  ControlSet control_set = ControlSet::box(constant(1, -5.0), constant(1, 5.0));

  void validate() const;
};

CashSpec make_cash_spec(const CashParams& params);

ModelSpec build_cash_model(const CashSpec& spec);
BundleSpec cash_bundle_spec(const CashSpec& spec);

/// p = exp(-lambda mu1 E) and the backward-Euler q on the bundle's operational
/// grid (k = 0, R = 0).
AdjointSolution cash_adjoints(const CashSpec& spec, const PathBundle& bundle);

/// u* = kappa - (beta1 q + sigma k - lambda beta2 p + lambda int R eta) / lambda as a
/// left-constant table at the calendar times D(u_i).
ControlProcess cash_optimal_control(const CashSpec& spec, const AdjointSolution& adjoint);
/// The unprojected formula at operational grid point i (k and R read as 0 at the last point).
double cash_control_value(const CashSpec& spec, const AdjointSolution& adjoint, std::size_t i);
ControlPolicy cash_optimal_policy(const CashSpec& spec);
/// Broadcasts the closed-form adjoints to every particle.
AdjointProvider cash_adjoint_provider(const CashSpec& spec);

/// max |H_v| along (u*, adjoints) on the bundle's grid.
double cash_first_order_residual(const CashSpec& spec, const PathBundle& bundle);

struct CertifyOptions {
  std::size_t ensemble = 1000;
  std::uint64_t seed = 1;
  std::size_t maxcond_candidates = 64;
  SolverConfig solver;
};

struct CandidatePolicy {
  std::string label;
  ControlPolicy policy;
};

/// v(t) = kappa(t).
ControlPolicy cash_benchmark_policy(const CashSpec& spec);

/// Paired gaps J(candidate) - J(u*) on a common ensemble plus the maximum
/// condition at u*.
OptimalityReport certify_optimality(const CashSpec& spec, const std::vector<CandidatePolicy>& candidates,
                                    const CertifyOptions& options);

}  // namespace tcfbsde
