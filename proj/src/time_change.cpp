#include "tcfbsde/time_change.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "tcfbsde/core.hpp"
#include "tcfbsde/format.hpp"

namespace tcfbsde {

void SubordinatorSpec::validate() const {
  require(std::isfinite(alpha) && std::isfinite(scale), "subordinator parameters must be finite");
  require(alpha > 0.0 && alpha < 1.0, "subordinator alpha must lie in (0, 1), got " + std::to_string(alpha));
  require(scale > 0.0, "subordinator scale must be positive");
}

void OperationalGrid::validate() const {
  require(std::isfinite(step) && std::isfinite(horizon), "operational grid must be finite");
  require(step > 0.0, "operational step must be positive");
  require(horizon >= step, "operational horizon must cover at least one step");
}

std::size_t OperationalGrid::size() const {
  const auto steps = static_cast<std::size_t>(std::llround(horizon / step));
  return std::max<std::size_t>(steps, 1) + 1;
}

double laplace_exponent(const SubordinatorSpec& spec, double xi) {
  spec.validate();
  require(std::isfinite(xi) && xi > 0.0, "laplace_exponent requires xi > 0");
  return spec.scale * std::pow(xi, spec.alpha);
}

double sample_stable_increment(const SubordinatorSpec& spec, double du, Rng& rng) {
  const double a = spec.alpha;
  const double angle = std::numbers::pi * rng.uniform();
  const double w = rng.exponential();
  const double s = std::sin(a * angle) / std::pow(std::sin(angle), 1.0 / a) *
                   std::pow(std::sin((1.0 - a) * angle) / w, (1.0 - a) / a);
  return std::pow(spec.scale * du, 1.0 / a) * s;
}

namespace {

std::size_t first_passage(const std::vector<double>& values, double horizon) {
  const auto it = std::upper_bound(values.begin(), values.end(), horizon);
  return static_cast<std::size_t>(it - values.begin());
}

}  // namespace

SubordinatorPath sample_subordinator_aligned(const SubordinatorSpec& spec, double calendar_horizon,
                                             const OperationalGrid& grid, std::uint64_t seed,
                                             std::size_t alignment) {
  spec.validate();
  grid.validate();
  require(std::isfinite(calendar_horizon) && calendar_horizon > 0.0, "calendar horizon must be positive");
  require(alignment >= 1, "alignment must be at least 1");

  Rng rng(seed);
  SubordinatorPath path;
  path.calendar_horizon = calendar_horizon;
  path.grid = grid;

  std::size_t steps = grid.size() - 1;
  steps = ((steps + alignment - 1) / alignment) * alignment;
  path.values.reserve(steps + 1);
  path.values.push_back(0.0);

  constexpr std::size_t kMaxSteps = std::size_t{1} << 34;
  std::size_t target = steps;
  for (;;) {
    while (path.values.size() < target + 1) {
      const double next = path.values.back() + sample_stable_increment(spec, grid.step, rng);
      require(std::isfinite(next), "horizon unreachable: subordinator overflow");
      path.values.push_back(next);
    }
    // Passage must be visible on the aligned (coarsest) sub-grid as well.
    if (path.values.back() > calendar_horizon) break;
    require(target < kMaxSteps, "horizon unreachable: operational grid too large");
    target *= 2;
    path.values.reserve(target + 1);
  }
  path.grid.horizon = grid.step * static_cast<double>(path.values.size() - 1);
  path.passage_index = first_passage(path.values, calendar_horizon);
  return path;
}

SubordinatorPath sample_subordinator(const SubordinatorSpec& spec, double calendar_horizon,
                                     const OperationalGrid& grid, std::uint64_t seed) {
  return sample_subordinator_aligned(spec, calendar_horizon, grid, seed, 1);
}

SubordinatorPath coarsen(const SubordinatorPath& path, std::size_t factor) {
  require(factor >= 1, "coarsening factor must be at least 1");
  require((path.values.size() - 1) % factor == 0, "path length is not aligned with the coarsening factor");
  SubordinatorPath coarse;
  coarse.calendar_horizon = path.calendar_horizon;
  coarse.grid.step = path.grid.step * static_cast<double>(factor);
  for (std::size_t i = 0; i < path.values.size(); i += factor) coarse.values.push_back(path.values[i]);
  coarse.grid.horizon = coarse.grid.step * static_cast<double>(coarse.values.size() - 1);
  require(coarse.values.back() > coarse.calendar_horizon, "coarsened path does not reach the horizon");
  coarse.passage_index = first_passage(coarse.values, coarse.calendar_horizon);
  return coarse;
}

InversePath invert_subordinator(const SubordinatorPath& path, std::span<const double> calendar_grid) {
  require(!path.values.empty(), "empty subordinator path");
  InversePath inverse;
  inverse.step = path.grid.step;
  inverse.calendar_grid.assign(calendar_grid.begin(), calendar_grid.end());
  inverse.values.reserve(calendar_grid.size());
  inverse.indices.reserve(calendar_grid.size());
  double previous = -std::numeric_limits<double>::infinity();
  for (const double t : calendar_grid) {
    require(std::isfinite(t) && t >= 0.0, "calendar grid points must be finite and nonnegative");
    require(t > previous, "calendar grid must be strictly increasing");
    previous = t;
    std::size_t index = 0;
    if (t > 0.0) {
      const auto it = std::upper_bound(path.values.begin(), path.values.end(), t);
      require(it != path.values.end(), "passage not reached: D ends at " + std::to_string(path.values.back()) +
                                           " <= t = " + std::to_string(t));
      index = static_cast<std::size_t>(it - path.values.begin());
    }
    inverse.indices.push_back(index);
    inverse.values.push_back(path.grid.point(index));
  }
  return inverse;
}

std::vector<double> uniform_calendar_grid(double horizon, std::size_t points) {
  require(points >= 2, "calendar grid needs at least two points");
  require(horizon > 0.0, "calendar horizon must be positive");
  std::vector<double> grid(points);
  for (std::size_t j = 0; j < points; ++j)
    grid[j] = horizon * static_cast<double>(j) / static_cast<double>(points - 1);
  grid.back() = horizon;
  return grid;
}

std::vector<double> separating_calendar_grid(const SubordinatorPath& path) {
  const double horizon = path.calendar_horizon;
  std::vector<double> grid{0.0};
  for (std::size_t k = 1; k <= path.passage_index; ++k) {
    // E equals u_k on [D(u_{k-1}), D(u_k)); pick a point of that interval.
    const double point = k == 1 ? 0.5 * std::min(path.values[1], horizon) : path.values[k - 1];
    if (point > horizon) break;
    if (point > grid.back()) grid.push_back(point);
  }
  if (horizon > grid.back()) grid.push_back(horizon);
  return grid;
}

void write_subordinator_csv(std::ostream& out, const SubordinatorPath& path, const InversePath& inverse) {
  out << "u,D,t,E\n";
  const std::size_t rows = std::max(path.values.size(), inverse.values.size());
  for (std::size_t i = 0; i < rows; ++i) {
    if (i < path.values.size()) out << format_double(path.operational_time(i)) << ',' << format_double(path.values[i]);
    else out << ',';
    out << ',';
    if (i < inverse.values.size()) out << format_double(inverse.calendar_grid[i]) << ',' << format_double(inverse.values[i]);
    else out << ',';
    out << '\n';
  }
}

}  // namespace tcfbsde
