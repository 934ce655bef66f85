#include "tcfbsde/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "tcfbsde/core.hpp"
#include "tcfbsde/format.hpp"

namespace tcfbsde {

std::string to_string(MarkLaw law) { return law == MarkLaw::kUniform ? "uniform" : "triangular"; }

MarkLaw mark_law_from_string(const std::string& name) {
  if (name == "uniform") return MarkLaw::kUniform;
  if (name == "triangular") return MarkLaw::kTriangular;
  throw Error("unknown mark law '" + name + "' (expected uniform or triangular)");
}

MarkQuadrature gauss_legendre(int order, double lo, double hi) {
  require(order >= 1, "quadrature order must be positive");
  require(hi > lo, "quadrature interval must be nonempty");
  MarkQuadrature rule;
  rule.nodes.resize(static_cast<std::size_t>(order));
  rule.weights.resize(static_cast<std::size_t>(order));
  const double mid = 0.5 * (hi + lo);
  const double half = 0.5 * (hi - lo);
  const int n = order;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged node for the weight.
    double p0 = 1.0, p1 = 0.0;
    for (int j = 1; j <= n; ++j) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
    }
    dp = n * (x * p0 - p1) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const auto lo_i = static_cast<std::size_t>(i);
    const auto hi_i = static_cast<std::size_t>(n - 1 - i);
    rule.nodes[lo_i] = mid - half * x;
    rule.nodes[hi_i] = mid + half * x;
    rule.weights[lo_i] = half * w;
    rule.weights[hi_i] = half * w;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = mid;
  return rule;
}

void LevyJumpSpec::validate() const {
  require(std::isfinite(c) && c > 0.0, "jump truncation c must be positive and finite");
  require(std::isfinite(intensity) && intensity > 0.0, "jump intensity must be positive and finite");
  require(quadrature_order >= 2 && quadrature_order <= 256, "quadrature order must lie in [2, 256]");
  require(mark_law != MarkLaw::kTriangular || quadrature_order % 2 == 0,
          "triangular mark law needs an even quadrature order");
}

double LevyJumpSpec::density(double z) const {
  if (std::abs(z) >= c) return 0.0;
  if (mark_law == MarkLaw::kUniform) return 0.5 / c;
  return (c - std::abs(z)) / (c * c);
}

double LevyJumpSpec::mass_of(double lo, double hi) const {
  lo = std::max(lo, -c);
  hi = std::min(hi, c);
  if (hi <= lo) return 0.0;
  if (mark_law == MarkLaw::kUniform) return intensity * (hi - lo) / (2.0 * c);
  const auto cdf = [this](double z) {
    if (z <= 0.0) return (c + z) * (c + z) / (2.0 * c * c);
    return 1.0 - (c - z) * (c - z) / (2.0 * c * c);
  };
  return intensity * (cdf(hi) - cdf(lo));
}

MarkQuadrature LevyJumpSpec::quadrature() const {
  validate();
  MarkQuadrature rule;
  if (mark_law == MarkLaw::kUniform) {
    rule = gauss_legendre(quadrature_order, -c, c);
  } else {
    // Density has a kink at 0, so integrate each half separately.
    const MarkQuadrature left = gauss_legendre(quadrature_order / 2, -c, 0.0);
    const MarkQuadrature right = gauss_legendre(quadrature_order / 2, 0.0, c);
    rule.nodes = left.nodes;
    rule.nodes.insert(rule.nodes.end(), right.nodes.begin(), right.nodes.end());
    rule.weights = left.weights;
    rule.weights.insert(rule.weights.end(), right.weights.begin(), right.weights.end());
  }
  for (std::size_t k = 0; k < rule.size(); ++k) rule.weights[k] *= density(rule.nodes[k]);
  return rule;
}

double LevyJumpSpec::sample_mark(Rng& rng) const {
  if (mark_law == MarkLaw::kUniform) return c * (2.0 * rng.uniform() - 1.0);
  const double a = rng.uniform();
  const double b = rng.uniform();
  return c * (a - b);
}

std::vector<double> BrownianPath::component(int j) const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i, j);
  return out;
}

BrownianPath sample_brownian(const OperationalGrid& grid, std::uint64_t seed, int dim) {
  grid.validate();
  require(dim >= 1 && dim <= kMaxDim, "Brownian dimension out of range");
  Rng rng(seed);
  BrownianPath path;
  path.grid = grid;
  path.dim = dim;
  const std::size_t n = grid.size();
  const auto d = static_cast<std::size_t>(dim);
  path.values.assign(n * d, 0.0);
  const double sd = std::sqrt(grid.step);
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) path.values[i * d + j] = path.values[(i - 1) * d + j] + sd * rng.normal();
  return path;
}

BrownianPath coarsen(const BrownianPath& path, std::size_t factor) {
  require(factor >= 1, "coarsening factor must be at least 1");
  require((path.size() - 1) % factor == 0, "Brownian path length is not aligned with the coarsening factor");
  BrownianPath coarse;
  coarse.dim = path.dim;
  coarse.grid.step = path.grid.step * static_cast<double>(factor);
  const auto d = static_cast<std::size_t>(path.dim);
  for (std::size_t i = 0; i < path.size(); i += factor)
    coarse.values.insert(coarse.values.end(), path.values.begin() + static_cast<std::ptrdiff_t>(i * d),
                         path.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  coarse.grid.horizon = coarse.grid.step * static_cast<double>(coarse.size() - 1);
  return coarse;
}

JumpStream sample_jumps(const LevyJumpSpec& spec, double horizon, std::uint64_t seed) {
  spec.validate();
  require(std::isfinite(horizon) && horizon >= 0.0, "jump horizon must be nonnegative");
  JumpStream stream;
  stream.horizon = horizon;
  Rng rng(seed);
  double u = 0.0;
  for (;;) {
    u += rng.exponential() / spec.intensity;
    if (u > horizon) break;
    stream.events.push_back({u, spec.sample_mark(rng)});
  }
  return stream;
}

std::vector<std::size_t> bin_events(const JumpStream& stream, const OperationalGrid& grid, std::size_t steps) {
  std::vector<std::size_t> offsets(steps + 1, 0);
  std::size_t e = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    offsets[i] = e;
    const double right = grid.point(i + 1);
    while (e < stream.events.size() && stream.events[e].u <= right) ++e;
  }
  offsets[steps] = e;
  return offsets;
}

std::vector<double> compensated_integral(const JumpIntegrand& h, const JumpStream& stream, const LevyJumpSpec& spec,
                                         const OperationalGrid& grid) {
  const MarkQuadrature rule = spec.quadrature();
  const std::size_t n = grid.size();
  std::vector<double> path(n, 0.0);
  std::size_t e = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double u = grid.point(i);
    double mean = 0.0;
    for (std::size_t k = 0; k < rule.size(); ++k) mean += rule.weights[k] * h(u, rule.nodes[k]);
    require(std::isfinite(mean), "compensator is not finite at u = " + format_double(u));
    double jumps = 0.0;
    const double right = grid.point(i + 1);
    for (; e < stream.events.size() && stream.events[e].u <= right; ++e) {
      const double value = h(stream.events[e].u, stream.events[e].z);
      require(std::isfinite(value), "integrand is not finite at event " + std::to_string(e) +
                                        " (u = " + format_double(stream.events[e].u) + ")");
      jumps += value;
    }
    path[i + 1] = path[i] + jumps - spec.intensity * grid.step * mean;
  }
  return path;
}

std::vector<double> compose_time_change(std::span<const double> op_values, const InversePath& inverse) {
  std::vector<double> out;
  out.reserve(inverse.indices.size());
  for (const std::size_t index : inverse.indices) {
    require(index < op_values.size(), "operational horizon exceeded");
    out.push_back(op_values[index]);
  }
  return out;
}

std::vector<double> compose_time_change(const BrownianPath& path, const InversePath& inverse) {
  const auto d = static_cast<std::size_t>(path.dim);
  std::vector<double> out;
  out.reserve(inverse.indices.size() * d);
  for (const std::size_t index : inverse.indices) {
    require(index < path.size(), "operational horizon exceeded");
    for (std::size_t j = 0; j < d; ++j) out.push_back(path.values[index * d + j]);
  }
  return out;
}

CalendarJumps compose_jumps(const JumpStream& stream, const InversePath& inverse) {
  CalendarJumps out;
  const std::size_t steps = inverse.values.empty() ? 0 : inverse.values.size() - 1;
  out.offsets.assign(steps + 1, 0);
  std::size_t e = 0;
  while (e < stream.events.size() && stream.events[e].u <= inverse.values.front()) ++e;
  for (std::size_t k = 0; k < steps; ++k) {
    out.offsets[k] = out.marks.size();
    for (; e < stream.events.size() && stream.events[e].u <= inverse.values[k + 1]; ++e)
      out.marks.push_back(stream.events[e].z);
  }
  out.offsets[steps] = out.marks.size();
  if (steps > 0) require(stream.horizon >= inverse.values.back(), "operational horizon exceeded by jump stream");
  return out;
}

double change_of_variable_check(std::span<const double> integrand, std::span<const double> driver,
                                const InversePath& inverse) {
  require(integrand.size() == driver.size(), "grid mismatch between integrand and driver");
  const std::vector<double> u_cal = compose_time_change(integrand, inverse);
  const std::vector<double> z_cal = compose_time_change(driver, inverse);
  double op_sum = 0.0;
  double cal_sum = 0.0;
  std::size_t i = 0;
  double worst = 0.0;
  for (std::size_t j = 0; j < inverse.indices.size(); ++j) {
    if (j > 0) cal_sum += u_cal[j - 1] * (z_cal[j] - z_cal[j - 1]);
    for (; i < inverse.indices[j]; ++i) op_sum += integrand[i] * (driver[i + 1] - driver[i]);
    worst = std::max(worst, std::abs(op_sum - cal_sum));
  }
  return worst;
}

double change_of_variable_check(std::span<const double> integrand, const BrownianPath& driver,
                                const InversePath& inverse, int component) {
  require(component >= 0 && component < driver.dim, "Brownian component out of range");
  const std::vector<double> z = driver.component(component);
  return change_of_variable_check(integrand, z, inverse);
}

double change_of_variable_check(std::span<const double> integrand, const JumpStream& driver, const LevyJumpSpec& spec,
                                const OperationalGrid& grid, const InversePath& inverse) {
  require(integrand.size() == grid.size(), "grid mismatch between integrand and jump driver");
  const std::vector<double> z = compensated_integral([](double, double mark) { return mark; }, driver, spec, grid);
  return change_of_variable_check(integrand, z, inverse);
}

double change_of_variable_check_calendar(const std::function<double(double)>& integrand,
                                         std::span<const double> driver, const SubordinatorPath& path,
                                         const InversePath& inverse) {
  require(driver.size() <= path.values.size(), "grid mismatch between driver and subordinator path");
  const std::vector<double> z_cal = compose_time_change(driver, inverse);
  double op_sum = 0.0;
  double cal_sum = 0.0;
  std::size_t i = 0;
  double worst = 0.0;
  for (std::size_t j = 0; j < inverse.indices.size(); ++j) {
    // Left limit of D at the start of the calendar step: D(E(t_{j-1})).
    if (j > 0) cal_sum += integrand(path.values[inverse.indices[j - 1]]) * (z_cal[j] - z_cal[j - 1]);
    for (; i < inverse.indices[j]; ++i) op_sum += integrand(path.values[i]) * (driver[i + 1] - driver[i]);
    worst = std::max(worst, std::abs(op_sum - cal_sum));
  }
  return worst;
}

void write_brownian_csv(std::ostream& out, const BrownianPath& path) {
  out << 'u';
  for (int j = 0; j < path.dim; ++j) out << ",B" << j;
  out << '\n';
  for (std::size_t i = 0; i < path.size(); ++i) {
    out << format_double(path.grid.point(i));
    for (int j = 0; j < path.dim; ++j) out << ',' << format_double(path.at(i, j));
    out << '\n';
  }
}

void write_jumps_csv(std::ostream& out, const JumpStream& stream) {
  out << "u,z\n";
  for (const auto& e : stream.events) out << format_double(e.u) << ',' << format_double(e.z) << '\n';
}

}  // namespace tcfbsde
