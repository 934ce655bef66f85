#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "tcfbsde/rng.hpp"

namespace tcfbsde {

/// Law of an alpha-stable subordinator with Laplace exponent scale * xi^alpha.
struct SubordinatorSpec {
  double alpha = 0.7;
  double scale = 1.0;

  void validate() const;
};

/// Uniform grid in operational time: 0, step, 2*step, ..., horizon.
struct OperationalGrid {
  double step = 1e-2;
  double horizon = 1.0;

  void validate() const;
  std::size_t size() const;  // number of points, at least 2
  double point(std::size_t i) const { return static_cast<double>(i) * step; }
};

/// A sampled staircase D(u_i) on an operational grid, extended until it
/// passes the calendar horizon. D is piecewise constant and right-continuous
/// between grid points.
struct SubordinatorPath {
  OperationalGrid grid;
  std::vector<double> values;
  double calendar_horizon = 0.0;
  std::size_t passage_index = 0;  // first i with values[i] > calendar_horizon

  double passage_time() const { return grid.point(passage_index); }
  double operational_time(std::size_t i) const { return grid.point(i); }
};

/// E(t_j) = inf{u : D(u) > t_j} evaluated on the stored staircase.
/// `indices[j]` is the operational grid index with values[j] = indices[j] * step.
struct InversePath {
  std::vector<double> calendar_grid;
  std::vector<double> values;
  std::vector<std::size_t> indices;
  double step = 0.0;
};

double laplace_exponent(const SubordinatorSpec& spec, double xi);

/// One increment of the subordinator over an operational step `du`
/// (Chambers-Mallows-Stuck / Kanter representation, totally skewed to the right).
double sample_stable_increment(const SubordinatorSpec& spec, double du, Rng& rng);

SubordinatorPath sample_subordinator(const SubordinatorSpec& spec, double calendar_horizon,
                                     const OperationalGrid& grid, std::uint64_t seed);

/// Samples on `grid` and keeps extending until the path coarsened by `alignment`
/// also passes the horizon, so coarsen(path, alignment) is always valid.
SubordinatorPath sample_subordinator_aligned(const SubordinatorSpec& spec, double calendar_horizon,
                                             const OperationalGrid& grid, std::uint64_t seed,
                                             std::size_t alignment);

/// Path on the grid with step * factor that shares the fine path's values.
SubordinatorPath coarsen(const SubordinatorPath& path, std::size_t factor);

InversePath invert_subordinator(const SubordinatorPath& path, std::span<const double> calendar_grid);

std::vector<double> uniform_calendar_grid(double horizon, std::size_t points);

/// Calendar grid on [0, T] with exactly one increment of E per step (a point
/// inside every flat interval of E). Composition and calendar-time integration
/// on this grid reproduce the operational-time sums exactly.
std::vector<double> separating_calendar_grid(const SubordinatorPath& path);

/// CSV with header `u,D,t,E`; the (t, E) block runs in parallel and leaves
/// its cells empty once it is exhausted (and vice versa).
void write_subordinator_csv(std::ostream& out, const SubordinatorPath& path, const InversePath& inverse);

}  // namespace tcfbsde
