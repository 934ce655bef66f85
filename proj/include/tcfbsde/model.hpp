#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tcfbsde/core.hpp"
#include "tcfbsde/noise.hpp"

namespace tcfbsde {

struct Dims {
  int n = 1;  // forward state
  int m = 1;  // backward state
  int d = 1;  // Brownian
  int k = 1;  // control
};

/// Admissible control set: a box or an intersection of halfspaces a.v <= b.
class ControlSet {
 public:
  enum class Kind { kBox, kPolytope };

  static ControlSet box(Vec lower, Vec upper);
  static ControlSet unbounded(int k);
  static ControlSet polytope(int k, std::vector<Vec> normals, std::vector<double> offsets);

  Kind kind() const { return kind_; }
  int dim() const { return dim_; }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const std::vector<Vec>& normals() const { return normals_; }
  const std::vector<double>& offsets() const { return offsets_; }

  /// Largest constraint violation (0 inside).
  double violation(const Vec& v) const;
  bool contains(const Vec& v, double tol = 0.0) const { return violation(v) <= tol; }
  /// Euclidean projection (clamp for boxes, Dykstra for polytopes).
  Vec project(const Vec& v) const;
  /// Projects violations up to `tol`; larger violations are an error.
  Vec admit(const Vec& v, double tol) const;

 private:
  Kind kind_ = Kind::kBox;
  int dim_ = 1;
  Vec lower_, upper_;
  std::vector<Vec> normals_;
  std::vector<double> offsets_;
};

/// v(.) as a feedback map of (t1, t2, x) or a left-constant table in calendar time.
class ControlProcess {
 public:
  using Feedback = std::function<Vec(double t1, double t2, const Vec& x)>;

  ControlProcess() = default;
  static ControlProcess feedback(Feedback fn);
  static ControlProcess constant(Vec value);
  static ControlProcess open_loop(std::vector<double> times, std::vector<Vec> values);

  Vec operator()(double t1, double t2, const Vec& x) const;
  /// u + rho * direction, evaluated pointwise.
  ControlProcess shifted(const ControlProcess& direction, double rho) const;

  bool valid() const { return static_cast<bool>(eval_); }
  bool is_open_loop() const { return table_ != nullptr; }
  const std::vector<double>& times() const;
  const std::vector<Vec>& values() const;

 private:
  struct Table {
    std::vector<double> times;
    std::vector<Vec> values;
  };
  Feedback eval_;
  std::shared_ptr<const Table> table_;
};

struct PathBundle;
/// Controls may depend on the path (e.g. open-loop tables computed from adjoints).
using ControlPolicy = std::function<ControlProcess(const PathBundle&)>;
ControlPolicy fixed_policy(ControlProcess control);
ControlPolicy shifted_policy(ControlPolicy base, ControlProcess direction, double rho);

using DriftFn = std::function<Vec(double t1, double t2, const Vec& x, const Vec& v)>;
using DiffusionFn = std::function<Mat(double t1, double t2, const Vec& x, const Vec& v)>;
using JumpFn = std::function<Vec(double t1, double t2, const Vec& x, const Vec& v, double z)>;
using JumpMeanFn = std::function<Vec(double t1, double t2, const Vec& x, const Vec& v)>;
using GeneratorFn =
    std::function<Vec(double t1, double t2, const Vec& x, const Vec& y, const Mat& a, const Vec& r, const Vec& v)>;
using TerminalFn = std::function<Vec(const Vec& x)>;
using RunningCostFn =
    std::function<double(double t1, double t2, const Vec& x, const Vec& y, const Mat& a, const Vec& r, const Vec& v)>;
using ScalarFn = std::function<double(const Vec&)>;

struct HamiltonianPoint;
using HamiltonianGradFn = std::function<Vec(const HamiltonianPoint&)>;

struct ModelFlags {
  bool linear = false;           // f, sigma, b, g affine in (x, y, a, r, v)
  bool linear_terminal = false;  // phi(x) = M_T x
  bool backward_deterministic = false;  // Y solvable pathwise given the subordinator path
  bool adjoint_deterministic = false;   // q solvable pathwise given the subordinator path
  bool additive_noise = false;          // sigma and b independent of x
  bool generator_uses_r = true;         // false: g evaluated once at the mark mean of r
  bool cost_uses_r = true;
};

struct ModelSpec {
  std::string name;
  Dims dims;
  Vec x0;
  DriftFn f;
  DiffusionFn sigma;  // n x d
  JumpFn b;
  GeneratorFn g;
  TerminalFn phi;
  RunningCostFn l;
  ScalarFn h;
  ScalarFn gamma;
  ControlSet control_set = ControlSet::unbounded(1);
  LevyJumpSpec jumps;
  std::optional<Mat> terminal_matrix;
  ModelFlags flags;
  double lipschitz = 0.0;  // bound on the x-Lipschitz constants of f, sigma, b
  JumpMeanFn b_mark_mean;  // optional closed form of E_mark[b(z)]
  HamiltonianGradFn hamiltonian_grad_v;  // optional closed form of H_v

  /// Probes every map at zero arguments for shape and finiteness.
  void validate() const;
};

/// Sum_k w_k b(z_k), using the closed form when the model has one.
Vec jump_mean(const ModelSpec& model, const MarkQuadrature& rule, double t1, double t2, const Vec& x, const Vec& v);

// Central finite differences with step 1e-5 * (1 + |argument|).
inline double fd_step(double at) { return 1e-5 * (1.0 + std::abs(at)); }

template <class Fn>
Mat jacobian(const Fn& fn, const Vec& at) {
  Mat out;
  Vec probe = at;
  for (int j = 0; j < at.size(); ++j) {
    const double step = fd_step(at(j));
    probe(j) = at(j) + step;
    const Vec plus = fn(probe);
    probe(j) = at(j) - step;
    const Vec minus = fn(probe);
    probe(j) = at(j);
    if (j == 0) out.resize(plus.size(), at.size());
    out.col(j) = (plus - minus) / (2.0 * step);
  }
  require(out.allFinite(), "non-finite finite-difference derivative");
  return out;
}

template <class Fn>
Vec gradient(const Fn& fn, const Vec& at) {
  Vec out(at.size());
  Vec probe = at;
  for (int j = 0; j < at.size(); ++j) {
    const double step = fd_step(at(j));
    probe(j) = at(j) + step;
    const double plus = fn(probe);
    probe(j) = at(j) - step;
    const double minus = fn(probe);
    probe(j) = at(j);
    out(j) = (plus - minus) / (2.0 * step);
  }
  require(out.allFinite(), "non-finite finite-difference derivative");
  return out;
}

}  // namespace tcfbsde
