#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tcfbsde/rng.hpp"
#include "tcfbsde/time_change.hpp"

namespace tcfbsde {

enum class MarkLaw { kUniform, kTriangular };

std::string to_string(MarkLaw law);
MarkLaw mark_law_from_string(const std::string& name);

/// Nodes and probability weights of the mark law: sum_k w_k h(z_k) ~ E[h(Z)].
struct MarkQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
};

/// Gauss-Legendre rule of the given order on [lo, hi] with weights summing to hi - lo.
MarkQuadrature gauss_legendre(int order, double lo, double hi);

/// Finite-activity jump measure Pi(dz) = intensity * mark_law(dz) on (-c, c).
struct LevyJumpSpec {
  double c = 1.0;
  double intensity = 1.0;
  MarkLaw mark_law = MarkLaw::kUniform;
  int quadrature_order = 16;

  void validate() const;
  double density(double z) const;                   // normalized mark density
  double mass_of(double lo, double hi) const;         // Pi((lo, hi))
  MarkQuadrature quadrature() const;
  double sample_mark(Rng& rng) const;
};

/// Brownian motion on the operational grid; row i holds B(u_i) in `dim` components.
struct BrownianPath {
  OperationalGrid grid;
  int dim = 1;
  std::vector<double> values;

  std::size_t size() const { return values.size() / static_cast<std::size_t>(dim); }
  double at(std::size_t i, int j = 0) const { return values[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)]; }
  std::vector<double> component(int j) const;
};

struct JumpEvent {
  double u = 0.0;
  double z = 0.0;
};

struct JumpStream {
  std::vector<JumpEvent> events;
  double horizon = 0.0;
};

BrownianPath sample_brownian(const OperationalGrid& grid, std::uint64_t seed, int dim = 1);
BrownianPath coarsen(const BrownianPath& path, std::size_t factor);

JumpStream sample_jumps(const LevyJumpSpec& spec, double horizon, std::uint64_t seed);

/// Events grouped by operational step: step i owns events with u in (u_i, u_{i+1}].
/// Returns offsets of size steps + 1 into stream.events.
std::vector<std::size_t> bin_events(const JumpStream& stream, const OperationalGrid& grid, std::size_t steps);

using JumpIntegrand = std::function<double(double u, double z)>;

/// Path of int int h dN~ on the grid points, compensator by left-endpoint rule in u.
std::vector<double> compensated_integral(const JumpIntegrand& h, const JumpStream& stream, const LevyJumpSpec& spec,
                                         const OperationalGrid& grid);

/// output[j] = op_values[index of E(t_j)].
std::vector<double> compose_time_change(std::span<const double> op_values, const InversePath& inverse);
std::vector<double> compose_time_change(const BrownianPath& path, const InversePath& inverse);  // row-major, dim wide

/// Jumps of N(dz, dE_t): event e lands in calendar step k when E(t_k) < u_e <= E(t_{k+1}).
struct CalendarJumps {
  std::vector<std::size_t> offsets;  // calendar steps + 1
  std::vector<double> marks;
};
CalendarJumps compose_jumps(const JumpStream& stream, const InversePath& inverse);

/// First formula: int_0^{E_t} U dZ against int_0^t U_{E_s} dZ_{E_s}.
/// Returns the max absolute difference over calendar grid points.
double change_of_variable_check(std::span<const double> integrand, std::span<const double> driver,
                                const InversePath& inverse);
double change_of_variable_check(std::span<const double> integrand, const BrownianPath& driver,
                                const InversePath& inverse, int component = 0);
double change_of_variable_check(std::span<const double> integrand, const JumpStream& driver, const LevyJumpSpec& spec,
                                const OperationalGrid& grid, const InversePath& inverse);

/// Second formula: int_0^t U_s dZ_{E_s} against int_0^{E_t} U_{D(s-)} dZ_s for a
/// calendar-time integrand U.
double change_of_variable_check_calendar(const std::function<double(double)>& integrand,
                                         std::span<const double> driver, const SubordinatorPath& path,
                                         const InversePath& inverse);

void write_brownian_csv(std::ostream& out, const BrownianPath& path);
void write_jumps_csv(std::ostream& out, const JumpStream& stream);

}  // namespace tcfbsde
