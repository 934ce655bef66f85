#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tcfbsde/noise.hpp"
#include "tcfbsde/time_change.hpp"

namespace tcfbsde {

/// Sampling parameters shared by every path of an ensemble.
struct BundleSpec {
  SubordinatorSpec subordinator;
  LevyJumpSpec jumps;
  double horizon = 1.0;  // calendar T
  double du = 1e-2;
  int brownian_dim = 1;
  std::size_t alignment = 1;  // paths stay coarsenable by this factor

  void validate() const;
};

/// One subordinator path with the noise of its own (member 0) particle.
/// `noise_index` differs from `index` only when the pairing is permuted.
struct PathBundle {
  BundleSpec spec;
  std::uint64_t master_seed = 0;
  std::size_t index = 0;
  std::size_t noise_index = 0;
  SubordinatorPath subordinator;
  InversePath inverse;  // on the separating calendar grid
  BrownianPath brownian;
  JumpStream jumps;

  std::size_t steps() const { return subordinator.passage_index; }
};

PathBundle make_bundle(const BundleSpec& spec, std::uint64_t master_seed, std::size_t index);
PathBundle make_bundle(const BundleSpec& spec, std::uint64_t master_seed, std::size_t index, std::size_t noise_index);

/// Same random path seen on a grid `factor` times coarser (increments summed).
PathBundle coarsen(const PathBundle& bundle, std::size_t factor);

/// Lazily generated ensemble: bundle(i) is a pure function of (spec, seed, i).
struct EnsemblePlan {
  BundleSpec spec;
  std::uint64_t master_seed = 0;
  std::size_t size = 0;

  PathBundle bundle(std::size_t i) const { return make_bundle(spec, master_seed, i); }
};

enum class ClockKind { kOperational, kCalendar };

struct ClockStep {
  double t1;  // calendar time argument of the coefficients
  double t2;  // operational time argument
  double dE;
};

/// Time points of a solve. Both routes store (t1, t2) per grid point and read
/// dE as a difference of t2, so matched grids give identical arithmetic.
struct Clock {
  ClockKind kind = ClockKind::kOperational;
  std::vector<double> grid;  // u_i (operational) or t_k (calendar)
  std::vector<double> t1;
  std::vector<double> t2;
  std::vector<std::size_t> op_index;  // operational grid index of each point

  std::size_t steps() const { return grid.size() - 1; }
  ClockStep step(std::size_t i) const { return {t1[i], t2[i], t2[i + 1] - t2[i]}; }
};

Clock operational_clock(const SubordinatorPath& path);
Clock calendar_clock(const SubordinatorPath& path, const InversePath& inverse);

/// Driver increments of one particle on a clock.
struct MemberNoise {
  std::vector<double> dB;               // steps x d, row-major
  std::vector<std::size_t> jump_offsets;  // steps + 1
  std::vector<double> marks;
};

/// Particles sharing one subordinator path (the "particle path" conditioning).
struct ConditionalEnsemble {
  Clock clock;
  int d = 1;
  std::vector<MemberNoise> members;

  std::size_t size() const { return members.size(); }
};

struct MemberDrivers {
  BrownianPath brownian;
  JumpStream jumps;
};

/// Member 0 is the bundle's own noise; members j >= 1 use the streams
/// (noise_index, purpose, j). All are sampled on the operational grid up to E_T.
std::vector<MemberDrivers> sample_members(const PathBundle& bundle, std::size_t count);

ConditionalEnsemble operational_ensemble(const PathBundle& bundle, const std::vector<MemberDrivers>& drivers);
ConditionalEnsemble calendar_ensemble(const PathBundle& bundle, const std::vector<MemberDrivers>& drivers,
                                      const InversePath& inverse);

}  // namespace tcfbsde
