#include "tcfbsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tcfbsde/ensemble.hpp"

namespace tcfbsde {

ControlSet ControlSet::box(Vec lower, Vec upper) {
  require(lower.size() == upper.size() && lower.size() >= 1 && lower.size() <= kMaxDim, "control box dimension mismatch");
  for (int i = 0; i < lower.size(); ++i)
    require(!(lower(i) > upper(i)) && !std::isnan(lower(i)) && !std::isnan(upper(i)), "control box has empty side");
  ControlSet set;
  set.kind_ = Kind::kBox;
  set.dim_ = static_cast<int>(lower.size());
  set.lower_ = std::move(lower);
  set.upper_ = std::move(upper);
  return set;
}

ControlSet ControlSet::unbounded(int k) {
  const double inf = std::numeric_limits<double>::infinity();
  return box(Vec::Constant(k, -inf), Vec::Constant(k, inf));
}

ControlSet ControlSet::polytope(int k, std::vector<Vec> normals, std::vector<double> offsets) {
  require(k >= 1 && k <= kMaxDim, "control dimension out of range");
  require(normals.size() == offsets.size() && !normals.empty(), "polytope needs matching normals and offsets");
  for (const auto& a : normals) {
    require(a.size() == k, "polytope normal has wrong dimension");
    require(a.norm() > 0.0, "polytope normal must be nonzero");
  }
  ControlSet set = unbounded(k);
  set.kind_ = Kind::kPolytope;
  set.normals_ = std::move(normals);
  set.offsets_ = std::move(offsets);
  return set;
}

double ControlSet::violation(const Vec& v) const {
  require(v.size() == dim_, "control has wrong dimension");
  double worst = 0.0;
  for (int i = 0; i < dim_; ++i) {
    if (!std::isfinite(v(i))) return std::numeric_limits<double>::infinity();
    worst = std::max({worst, lower_(i) - v(i), v(i) - upper_(i)});
  }
  for (std::size_t c = 0; c < normals_.size(); ++c)
    worst = std::max(worst, (normals_[c].dot(v) - offsets_[c]) / normals_[c].norm());
  return worst;
}

Vec ControlSet::project(const Vec& v) const {
  if (kind_ == Kind::kBox) return v.cwiseMax(lower_).cwiseMin(upper_);
  // Dykstra's alternating projections onto the halfspaces.
  const std::size_t count = normals_.size();
  std::vector<Vec> corrections(count, Vec::Zero(dim_));
  Vec x = v;
  for (int sweep = 0; sweep < 10000; ++sweep) {
    const Vec start = x;
    for (std::size_t c = 0; c < count; ++c) {
      const Vec y = x + corrections[c];
      const Vec& a = normals_[c];
      const double excess = a.dot(y) - offsets_[c];
      const Vec projected = excess > 0.0 ? Vec(y - (excess / a.squaredNorm()) * a) : y;
      corrections[c] = y - projected;
      x = projected;
    }
    if ((x - start).norm() <= 1e-14 * (1.0 + x.norm())) break;
  }
  return x;
}

Vec ControlSet::admit(const Vec& v, double tol) const {
  const double excess = violation(v);
  if (excess <= 0.0) return v;
  require(excess <= tol, "control infeasible: violates the admissible set by " + std::to_string(excess));
  return project(v);
}

ControlProcess ControlProcess::feedback(Feedback fn) {
  require(static_cast<bool>(fn), "empty feedback control");
  ControlProcess c;
  c.eval_ = std::move(fn);
  return c;
}

ControlProcess ControlProcess::constant(Vec value) {
  return feedback([value](double, double, const Vec&) { return value; });
}

ControlProcess ControlProcess::open_loop(std::vector<double> times, std::vector<Vec> values) {
  require(!times.empty() && times.size() == values.size(), "open-loop table needs matching times and values");
  for (std::size_t i = 1; i < times.size(); ++i)
    require(times[i] > times[i - 1], "open-loop table times must be strictly increasing");
  auto table = std::make_shared<Table>(Table{std::move(times), std::move(values)});
  ControlProcess c;
  c.table_ = table;
  c.eval_ = [table](double t1, double, const Vec&) {
    // Left-constant: the value of the last node at or before t1.
    const auto it = std::upper_bound(table->times.begin(), table->times.end(), t1);
    const std::size_t i = it == table->times.begin() ? 0 : static_cast<std::size_t>(it - table->times.begin()) - 1;
    return table->values[i];
  };
  return c;
}

Vec ControlProcess::operator()(double t1, double t2, const Vec& x) const {
  require(valid(), "control process is empty");
  return eval_(t1, t2, x);
}

ControlProcess ControlProcess::shifted(const ControlProcess& direction, double rho) const {
  require(valid() && direction.valid(), "cannot shift an empty control");
  const Feedback base = eval_;
  const Feedback dir = direction.eval_;
  return feedback([base, dir, rho](double t1, double t2, const Vec& x) -> Vec {
    return base(t1, t2, x) + rho * dir(t1, t2, x);
  });
}

const std::vector<double>& ControlProcess::times() const {
  require(is_open_loop(), "control is not an open-loop table");
  return table_->times;
}

const std::vector<Vec>& ControlProcess::values() const {
  require(is_open_loop(), "control is not an open-loop table");
  return table_->values;
}

ControlPolicy fixed_policy(ControlProcess control) {
  return [control](const PathBundle&) { return control; };
}

ControlPolicy shifted_policy(ControlPolicy base, ControlProcess direction, double rho) {
  return [base, direction, rho](const PathBundle& bundle) { return base(bundle).shifted(direction, rho); };
}

namespace {

void check_vec(const Vec& v, int n, const std::string& what) {
  require(v.size() == n, what + " has dimension " + std::to_string(v.size()) + ", expected " + std::to_string(n));
  require(v.allFinite(), what + " is not finite at the probe point");
}

}  // namespace

void ModelSpec::validate() const {
  require(dims.n >= 1 && dims.n <= kMaxDim && dims.m >= 1 && dims.m <= kMaxDim && dims.d >= 1 &&
              dims.d <= kMaxDim && dims.k >= 1 && dims.k <= kMaxDim,
          "model dimensions out of range [1, " + std::to_string(kMaxDim) + "]");
  require(f && sigma && b && g && phi && l && h && gamma, "model '" + name + "' has a missing coefficient");
  jumps.validate();
  check_vec(x0, dims.n, "x0");
  require(control_set.dim() == dims.k, "control set dimension does not match k");
  const Vec x = Vec::Zero(dims.n), y = Vec::Zero(dims.m), r = Vec::Zero(dims.m), v = Vec::Zero(dims.k);
  const Mat a = Mat::Zero(dims.m, dims.d);
  check_vec(f(0.0, 0.0, x, v), dims.n, "f");
  const Mat s = sigma(0.0, 0.0, x, v);
  require(s.rows() == dims.n && s.cols() == dims.d, "sigma must be n x d");
  require(s.allFinite(), "sigma is not finite at the probe point");
  check_vec(b(0.0, 0.0, x, v, 0.5 * jumps.c), dims.n, "b");
  if (b_mark_mean) check_vec(b_mark_mean(0.0, 0.0, x, v), dims.n, "b_mark_mean");
  check_vec(g(0.0, 0.0, x, y, a, r, v), dims.m, "g");
  check_vec(phi(x), dims.m, "phi");
  require(std::isfinite(l(0.0, 0.0, x, y, a, r, v)), "l is not finite at the probe point");
  require(std::isfinite(h(x)), "h is not finite at the probe point");
  require(std::isfinite(gamma(y)), "gamma is not finite at the probe point");
  if (flags.linear_terminal) {
    require(terminal_matrix.has_value(), "linear_terminal set without M_T");
    require(terminal_matrix->rows() == dims.m && terminal_matrix->cols() == dims.n, "M_T must be m x n");
    Vec probe = Vec::LinSpaced(dims.n, 0.5, 1.5);
    require(((*terminal_matrix) * probe - phi(probe)).norm() <= 1e-12 * (1.0 + probe.norm()),
            "phi does not match M_T");
  }
  require(std::isfinite(lipschitz) && lipschitz >= 0.0, "Lipschitz bound must be nonnegative");
}

Vec jump_mean(const ModelSpec& model, const MarkQuadrature& rule, double t1, double t2, const Vec& x, const Vec& v) {
  if (model.b_mark_mean) return model.b_mark_mean(t1, t2, x, v);
  Vec sum = Vec::Zero(model.dims.n);
  for (std::size_t k = 0; k < rule.size(); ++k) sum += rule.weights[k] * model.b(t1, t2, x, v, rule.nodes[k]);
  return sum;
}

}  // namespace tcfbsde
