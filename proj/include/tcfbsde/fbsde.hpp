#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tcfbsde/ensemble.hpp"
#include "tcfbsde/model.hpp"

namespace tcfbsde {

struct SolverConfig {
  std::size_t inner_paths = 32;  // particles per subordinator path (regime b)
  int basis_degree = 3;
  double ridge = 1e-8;
  int jump_basis = 4;  // Legendre terms for r(t, z)
  double control_tolerance = 1e-9;
  unsigned threads = 1;
};

/// Degree-limited monomial regression on standardized states. Dimensions with
/// (numerically) zero spread are dropped; the intercept is never penalized.
class Regression {
 public:
  Regression(const std::vector<Vec>& states, std::size_t offset, std::size_t count, int degree, double ridge,
             std::size_t step);
  std::size_t basis_size() const { return static_cast<std::size_t>(design_.cols()); }
  /// Fitted conditional expectations of each target column.
  Eigen::MatrixXd fit(const Eigen::MatrixXd& targets) const;

 private:
  Eigen::MatrixXd design_;
  Eigen::LDLT<Eigen::MatrixXd> solver_;
};

/// Full particle solution on one clock; particle j of point i sits at i * members + j.
struct EnsembleSolution {
  Clock clock;
  std::size_t members = 0;
  Dims dims;
  std::size_t nodes = 0;  // z-quadrature nodes
  std::vector<Vec> x;     // (steps + 1) * members
  std::vector<Vec> v;     // steps * members
  std::vector<Vec> y;     // (steps + 1) * members
  std::vector<Mat> a;     // steps * members, m x d
  std::vector<double> r;  // steps * members * m * nodes, node-major per entry
  bool has_backward = false;

  std::size_t steps() const { return clock.steps(); }
  std::size_t at(std::size_t i, std::size_t j) const { return i * members + j; }
  Eigen::Map<const Eigen::MatrixXd> r_nodes(std::size_t i, std::size_t j) const;
  Eigen::Map<Eigen::MatrixXd> r_nodes(std::size_t i, std::size_t j);
};

void solve_forward(const ModelSpec& model, const ControlProcess& control, const ConditionalEnsemble& ensemble,
                   const SolverConfig& config, EnsembleSolution& out);

/// A backward equation  -dY = F(Y, A, R) dE - A dB - int R dN~  with F already
/// integrated against Pi(dz). `r` is passed as an m x nodes matrix.
struct BackwardProblem {
  int dim = 1;
  std::function<Vec(std::size_t step, std::size_t member, const Vec& y, const Mat& a,
                    const Eigen::Ref<const Eigen::MatrixXd>& r)>
      driver;
  std::vector<Vec> terminal;  // one per member
  bool deterministic = false;  // regime (a): A = 0, R = 0 pathwise
};

struct BackwardPaths {
  std::vector<Vec> y;     // (steps + 1) * members
  std::vector<Mat> a;     // steps * members
  std::vector<double> r;  // steps * members * dim * nodes
};

/// Implicit backward Euler; regression over the particles (regime b) or
/// pathwise (regime a). `state` holds the regression variables per point.
BackwardPaths solve_backward(const BackwardProblem& problem, const ConditionalEnsemble& ensemble,
                             const std::vector<Vec>& state, const MarkQuadrature& rule, double intensity,
                             const SolverConfig& config);

/// `regression_state` overrides the regression variables (default: the solution's own X).
/// Perturbation checks pass the base X so that both solves project on one basis.
void solve_backward(const ModelSpec& model, const ConditionalEnsemble& ensemble, const SolverConfig& config,
                    EnsembleSolution& solution, const std::vector<Vec>* regression_state = nullptr);

EnsembleSolution solve_ensemble(const ModelSpec& model, const ControlProcess& control,
                                const ConditionalEnsemble& ensemble, const SolverConfig& config, bool backward = true,
                                const std::vector<Vec>* regression_state = nullptr);

/// Cost of one particle: sum dE * int l Pi(dz) + h(X_N) + gamma(Y_0).
double member_cost(const ModelSpec& model, const EnsembleSolution& solution, std::size_t member);
/// Mean particle cost: the conditional expectation given the subordinator path.
double path_cost(const ModelSpec& model, const EnsembleSolution& solution);

/// Single-particle view of a solution.
struct FBSDESolution {
  ClockKind clock = ClockKind::kOperational;
  std::vector<double> grid;
  std::vector<double> t1, t2;
  std::vector<Vec> x, v, y;
  std::vector<Mat> a;
  std::vector<double> r;  // steps * m * nodes
  std::size_t nodes = 0;
  bool has_backward = false;

  std::size_t steps() const { return grid.size() - 1; }
};

FBSDESolution member_view(const EnsembleSolution& solution, std::size_t member);

FBSDESolution solve_forward_dual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                                 const SolverConfig& config = {});
FBSDESolution solve_backward_dual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                                  const FBSDESolution& forward, const SolverConfig& config = {});
/// Dual components evaluated at E(t_j); A and r vanish past E_T.
FBSDESolution compose_duality(const FBSDESolution& dual, const InversePath& inverse);

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_path;
};

CostEstimate summarize(std::vector<double> per_path);

/// Costs of several policies on one ensemble with common random numbers.
std::vector<CostEstimate> evaluate_costs(const ModelSpec& model, std::span<const ControlPolicy> policies,
                                         const EnsemblePlan& plan, const SolverConfig& config);
CostEstimate evaluate_cost(const ModelSpec& model, const ControlPolicy& policy, const EnsemblePlan& plan,
                           const SolverConfig& config);
CostEstimate evaluate_cost(const ModelSpec& model, const ControlPolicy& policy, const std::vector<PathBundle>& bundles,
                           const SolverConfig& config);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Exceptions are
/// rethrown for the lowest failing index with the index in the message.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

BundleSpec bundle_spec_for(const ModelSpec& model, const SubordinatorSpec& subordinator, double horizon, double du);

// Checks ---------------------------------------------------------------------

struct DualityResult {
  double forward = 0.0;   // max |X_composed - X_calendar|
  double backward = 0.0;  // max over Y, A, r
  double reverse = 0.0;   // calendar solution read back on the operational grid vs dual
  double max() const { return std::max({forward, backward, reverse}); }
};

/// Compares the composed dual solution with a direct calendar-time solve on the
/// separating grid, over every particle. `inject_fault` flips the drift sign in
/// the calendar route only (test fixture).
DualityResult duality_round_trip(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                                 const SolverConfig& config, bool inject_fault = false);

/// max over grid points of |dX|^2 / (|delta|^2 exp(C E_t)), C = 2L + L^2 + lambda L^2.
double gronwall_ratio(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                      const Vec& delta, const SolverConfig& config = {});

struct ScalarField {
  std::function<double(double t1, double t2, const Vec& x)> value;
  // Optional closed forms; finite differences otherwise.
  std::function<double(double, double, const Vec&)> d_t1, d_t2;
  std::function<Vec(double, double, const Vec&)> grad_x;
  std::function<Mat(double, double, const Vec&)> hess_x;
};

/// F(t, E_t, X_t) - F(0, 0, x0) minus the discretized Ito right-hand side, on
/// the grid of the given member.
std::vector<double> ito_decomposition_check(const ModelSpec& model, const ScalarField& F, const EnsembleSolution& solution,
                                            const ConditionalEnsemble& ensemble, std::size_t member = 0);

/// Terminal Ito residual of F (operational clock), averaged over `members`
/// conditional noise draws sharing the bundle's time change. Member 0 is the
/// bundle's own particle.
double ito_terminal_residual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                             const ScalarField& F, const SolverConfig& config = {}, std::size_t members = 1);

/// Same, over explicitly supplied member drivers.
double ito_terminal_residual(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                             const std::vector<MemberDrivers>& drivers, const ScalarField& F,
                             const SolverConfig& config = {});

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace tcfbsde
