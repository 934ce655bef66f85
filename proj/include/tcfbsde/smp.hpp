#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tcfbsde/fbsde.hpp"

namespace tcfbsde {

/// Arguments of the Hamiltonian at one time point. r and R carry one column
/// per z-quadrature node.
struct HamiltonianPoint {
  double t1 = 0.0;
  double t2 = 0.0;
  Vec x, y;
  Mat a;
  Eigen::MatrixXd r;  // m x nodes
  Vec v, p, q;
  Mat k;              // n x d
  Eigen::MatrixXd R;  // n x nodes
};

/// <q, f> + <k, sigma> - int (<p, g> - l - <R, b>) Pi(dz).
double hamiltonian(const ModelSpec& model, const MarkQuadrature& rule, const HamiltonianPoint& point);

/// Closed form when the model provides one, central differences otherwise
/// (one-sided next to the boundary of the control set).
Vec hamiltonian_grad_v(const ModelSpec& model, const MarkQuadrature& rule, const HamiltonianPoint& point,
                       bool allow_closed_form = true);

/// Adjoint particles (p, q, k, R) on the clock of a state solution.
struct AdjointEnsemble {
  Clock clock;
  std::size_t members = 0;
  Dims dims;
  std::size_t nodes = 0;
  std::vector<Vec> p;     // (steps + 1) * members
  std::vector<Vec> q;     // (steps + 1) * members
  std::vector<Mat> k;     // steps * members
  std::vector<double> R;  // steps * members * n * nodes

  std::size_t steps() const { return clock.steps(); }
  Eigen::Map<const Eigen::MatrixXd> R_nodes(std::size_t i, std::size_t j) const;
};

struct AdjointSolution {
  ClockKind clock = ClockKind::kOperational;
  std::vector<double> grid, t1, t2;
  std::vector<Vec> p, q;
  std::vector<Mat> k;
  std::vector<double> R;  // steps * n * nodes
  std::size_t nodes = 0;
};

AdjointSolution adjoint_view(const AdjointEnsemble& adjoint, std::size_t member);
/// Copies a single-path adjoint to every particle (conditionally deterministic case).
AdjointEnsemble broadcast(const AdjointSolution& adjoint, const Dims& dims, std::size_t members);

/// Derivatives of every coefficient along a state solution (finite differences),
/// packed per particle point. Generator and cost derivatives are stored per
/// mark node, or once at the mark mean of r when the map ignores r node-wise.
class Linearization {
 public:
  // Small copies into fixed-capacity storage keep products off the heap.
  using MatView = Mat;
  using VecView = Vec;

  Linearization(const ModelSpec& model, const EnsembleSolution& solution);

  MatView fx(std::size_t i, std::size_t j) const { return mat(i, j, off_.fx, n_, n_); }
  MatView fv(std::size_t i, std::size_t j) const { return mat(i, j, off_.fv, n_, k_); }
  MatView jx(std::size_t i, std::size_t j) const { return mat(i, j, off_.jx, n_, n_); }  // jump mean
  MatView jv(std::size_t i, std::size_t j) const { return mat(i, j, off_.jv, n_, k_); }
  MatView sx(std::size_t i, std::size_t j, int q) const { return mat(i, j, off_.sx + q * n_ * n_, n_, n_); }
  MatView sv(std::size_t i, std::size_t j, int q) const { return mat(i, j, off_.sv + q * n_ * k_, n_, k_); }
  bool has_bx() const { return has_bx_; }
  MatView bx(std::size_t i, std::size_t j, std::size_t node) const {
    return mat(i, j, off_.bx + static_cast<int>(node) * n_ * n_, n_, n_);
  }
  MatView gx(std::size_t i, std::size_t j, std::size_t c) const { return mat(i, j, goff(c, off_.gx), m_, n_); }
  MatView gy(std::size_t i, std::size_t j, std::size_t c) const { return mat(i, j, goff(c, off_.gy), m_, m_); }
  MatView gr(std::size_t i, std::size_t j, std::size_t c) const { return mat(i, j, goff(c, off_.gr), m_, m_); }
  MatView gv(std::size_t i, std::size_t j, std::size_t c) const { return mat(i, j, goff(c, off_.gv), m_, k_); }
  MatView ga(std::size_t i, std::size_t j, std::size_t c, int q) const {
    return mat(i, j, goff(c, off_.ga) + q * m_ * m_, m_, m_);
  }
  VecView lx(std::size_t i, std::size_t j, std::size_t c) const { return vec(i, j, loff(c, off_.lx), n_); }
  VecView ly(std::size_t i, std::size_t j, std::size_t c) const { return vec(i, j, loff(c, off_.ly), m_); }
  VecView lr(std::size_t i, std::size_t j, std::size_t c) const { return vec(i, j, loff(c, off_.lr), m_); }
  VecView lv(std::size_t i, std::size_t j, std::size_t c) const { return vec(i, j, loff(c, off_.lv), k_); }
  VecView la(std::size_t i, std::size_t j, std::size_t c, int q) const {
    return vec(i, j, loff(c, off_.la) + q * m_, m_);
  }

  /// Node weights of the generator / cost derivatives (a single weight 1 when r is unused).
  const std::vector<double>& generator_weights() const { return g_weights_; }
  const std::vector<double>& cost_weights() const { return l_weights_; }
  /// Derivatives of b at an event mark.
  std::pair<Mat, Mat> jump_derivatives(std::size_t i, std::size_t j, double z) const;
  /// (g_r, l_r) at an event mark with r interpolated between nodes.
  std::pair<Mat, Vec> event_r_derivatives(std::size_t i, std::size_t j, double z) const;

 private:
  struct Offsets {
    int fx = 0, fv = 0, jx = 0, jv = 0, sx = 0, sv = 0, bx = 0, g = 0, l = 0;
    int gx = 0, gy = 0, gr = 0, gv = 0, ga = 0, g_stride = 0;  // within a generator node
    int lx = 0, ly = 0, lr = 0, lv = 0, la = 0, l_stride = 0;  // within a cost node
    int total = 0;
  };
  int goff(std::size_t c, int field) const { return off_.g + static_cast<int>(c) * off_.g_stride + field; }
  int loff(std::size_t c, int field) const { return off_.l + static_cast<int>(c) * off_.l_stride + field; }
  MatView mat(std::size_t i, std::size_t j, int offset, int rows, int cols) const {
    return Eigen::Map<const Eigen::MatrixXd>(data_.data() + (i * members_ + j) * static_cast<std::size_t>(off_.total) + offset,
                                             rows, cols);
  }
  VecView vec(std::size_t i, std::size_t j, int offset, int size) const {
    return Eigen::Map<const Eigen::VectorXd>(data_.data() + (i * members_ + j) * static_cast<std::size_t>(off_.total) + offset,
                                             size);
  }

  const ModelSpec& model_;
  const EnsembleSolution& solution_;
  MarkQuadrature rule_;
  std::size_t members_;
  int n_, m_, d_, k_;
  bool has_bx_;
  std::vector<double> g_weights_, l_weights_;
  Offsets off_;
  std::vector<double> data_;
};

AdjointEnsemble solve_adjoint(const ModelSpec& model, const EnsembleSolution& solution,
                              const ConditionalEnsemble& ensemble, const Linearization& lin, const SolverConfig& config);
/// Member-0 adjoint along the solution driven by `control` on the bundle.
AdjointSolution solve_adjoint(const ModelSpec& model, const ControlProcess& control, const PathBundle& bundle,
                              const SolverConfig& config = {});

struct VariationalEnsemble {
  std::vector<Vec> x1, y1;  // (steps + 1) * members
  std::vector<Mat> a1;      // steps * members
  std::vector<double> r1;   // steps * members * m * nodes
  std::vector<Vec> direction;  // steps * members
};

/// Linearized system in the direction `direction` around the base solution.
/// Base control and direction are read along the base trajectory (open-loop
/// perturbations).
VariationalEnsemble solve_variational(const ModelSpec& model, const EnsembleSolution& base,
                                      const ConditionalEnsemble& ensemble, const Linearization& lin,
                                      const ControlProcess& direction, const SolverConfig& config);

/// Linearized cost change: E[int l-derivatives . (X1, Y1, A1, r1, v) dE + h_x X1_T + gamma_y Y1_0]
/// for one particle.
double linearized_cost(const ModelSpec& model, const EnsembleSolution& base, const Linearization& lin,
                       const VariationalEnsemble& var, std::size_t member);

struct ConvergenceRow {
  double rho = 0.0;
  double quotient = 0.0, quotient_se = 0.0;      // rho^-1 (J(u + rho v) - J(u))
  double linearized = 0.0, linearized_se = 0.0;  // linearized cost change
  double difference = 0.0, difference_se = 0.0;  // |quotient - linearized|
};

struct RemainderRow {
  double rho = 0.0;
  double x = 0.0, x_se = 0.0;  // sup_t mean |X~|^2
  double y = 0.0, y_se = 0.0;  // sup_t mean |Y~|^2
  double a = 0.0, a_se = 0.0;  // mean int |A~|^2 dE
  double r = 0.0, r_se = 0.0;  // mean int int |r~|^2 Pi(dz) dE
};

std::vector<ConvergenceRow> gateaux_consistency_check(const ModelSpec& model, const ControlPolicy& u,
                                                      const ControlProcess& v, const std::vector<double>& rhos,
                                                      const EnsemblePlan& plan, const SolverConfig& config);

std::vector<RemainderRow> remainder_convergence_check(const ModelSpec& model, const ControlPolicy& u,
                                                      const ControlProcess& v, const std::vector<double>& rhos,
                                                      const EnsemblePlan& plan, const SolverConfig& config,
                                                      std::size_t calendar_points = 101);

struct Candidate {
  std::string label;
  ControlProcess control;
};

/// Constants on a lattice of the control set plus piecewise-constant random
/// controls in calendar time. Unbounded sides are replaced by +-radius.
std::vector<Candidate> sample_candidates(const ControlSet& set, std::size_t count, std::uint64_t seed, double horizon,
                                         double radius = 5.0);

struct MarginRow {
  std::string label;
  double margin = 0.0;
  double std_error = 0.0;
};

struct MarginReport {
  double min_margin = 0.0;
  double std_error = 0.0;
  std::string witness;
  std::vector<MarginRow> rows;
};

using AdjointProvider = std::function<AdjointEnsemble(const PathBundle&, const EnsembleSolution&,
                                                      const ConditionalEnsemble&)>;

/// E int <H_v, v - u> dE for every candidate; the default provider solves the
/// general adjoint system.
MarginReport check_necessary_condition(const ModelSpec& model, const ControlPolicy& u,
                                       const std::vector<Candidate>& candidates, const EnsemblePlan& plan,
                                       const SolverConfig& config, const AdjointProvider& provider = {});

struct SampleCloud {
  std::size_t count = 256;
  std::uint64_t seed = 1;
  double radius = 2.0;
  double horizon = 1.0;
};

struct ConvexityReport {
  std::size_t tests = 0;
  std::size_t hamiltonian_violations = 0;
  std::size_t h_violations = 0;
  std::size_t gamma_violations = 0;
  bool terminal_checked = false;
  double terminal_error = 0.0;
  double worst_gap = 0.0;  // largest midpoint excess found

  bool passed() const { return hamiltonian_violations == 0 && h_violations == 0 && gamma_violations == 0 &&
                               terminal_error <= 1e-10; }
};

ConvexityReport check_sufficient_condition_hypotheses(const ModelSpec& model, const SampleCloud& cloud);

}  // namespace tcfbsde
