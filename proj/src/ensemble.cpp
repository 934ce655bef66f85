#include "tcfbsde/ensemble.hpp"

#include <cmath>

#include "tcfbsde/core.hpp"

namespace tcfbsde {

void BundleSpec::validate() const {
  subordinator.validate();
  jumps.validate();
  require(std::isfinite(horizon) && horizon > 0.0, "calendar horizon must be positive");
  require(std::isfinite(du) && du > 0.0, "operational step must be positive");
  require(brownian_dim >= 1 && brownian_dim <= kMaxDim, "Brownian dimension out of range");
  require(alignment >= 1, "alignment must be at least 1");
}

PathBundle make_bundle(const BundleSpec& spec, std::uint64_t master_seed, std::size_t index) {
  return make_bundle(spec, master_seed, index, index);
}

PathBundle make_bundle(const BundleSpec& spec, std::uint64_t master_seed, std::size_t index, std::size_t noise_index) {
  spec.validate();
  PathBundle bundle;
  bundle.spec = spec;
  bundle.master_seed = master_seed;
  bundle.index = index;
  bundle.noise_index = noise_index;
  // Initial operational horizon of order E[E_T]; the sampler doubles it as needed.
  const OperationalGrid grid{spec.du, std::max(spec.du, std::pow(spec.horizon, spec.subordinator.alpha))};
  bundle.subordinator = sample_subordinator_aligned(spec.subordinator, spec.horizon, grid,
                                                    stream_seed(master_seed, index, StreamPurpose::kSubordinator),
                                                    spec.alignment);
  bundle.inverse = invert_subordinator(bundle.subordinator, separating_calendar_grid(bundle.subordinator));
  bundle.brownian = sample_brownian(bundle.subordinator.grid,
                                    stream_seed(master_seed, noise_index, StreamPurpose::kBrownian), spec.brownian_dim);
  bundle.jumps = sample_jumps(spec.jumps, bundle.subordinator.grid.horizon,
                              stream_seed(master_seed, noise_index, StreamPurpose::kJumps));
  return bundle;
}

PathBundle coarsen(const PathBundle& bundle, std::size_t factor) {
  PathBundle coarse = bundle;
  coarse.spec.du = bundle.spec.du * static_cast<double>(factor);
  coarse.spec.alignment = std::max<std::size_t>(1, bundle.spec.alignment / factor);
  coarse.subordinator = coarsen(bundle.subordinator, factor);
  coarse.inverse = invert_subordinator(coarse.subordinator, separating_calendar_grid(coarse.subordinator));
  coarse.brownian = coarsen(bundle.brownian, factor);
  return coarse;
}

Clock operational_clock(const SubordinatorPath& path) {
  Clock clock;
  clock.kind = ClockKind::kOperational;
  const std::size_t n = path.passage_index;
  for (std::size_t i = 0; i <= n; ++i) {
    clock.grid.push_back(path.grid.point(i));
    clock.t1.push_back(path.values[i]);
    clock.t2.push_back(path.grid.point(i));
    clock.op_index.push_back(i);
  }
  return clock;
}

Clock calendar_clock(const SubordinatorPath& path, const InversePath& inverse) {
  require(inverse.values.size() >= 2, "calendar clock needs at least two points");
  Clock clock;
  clock.kind = ClockKind::kCalendar;
  clock.grid = inverse.calendar_grid;
  for (std::size_t k = 0; k < inverse.values.size(); ++k) {
    const std::size_t i = inverse.indices[k];
    require(i < path.values.size(), "operational horizon exceeded");
    clock.t1.push_back(path.values[i]);  // D(E_t)
    clock.t2.push_back(path.grid.point(i));
    clock.op_index.push_back(i);
  }
  return clock;
}

std::vector<MemberDrivers> sample_members(const PathBundle& bundle, std::size_t count) {
  require(count >= 1, "conditional ensemble needs at least one member");
  std::vector<MemberDrivers> out;
  out.reserve(count);
  out.push_back({bundle.brownian, bundle.jumps});
  const OperationalGrid& grid = bundle.subordinator.grid;
  for (std::size_t j = 1; j < count; ++j) {
    const auto member = static_cast<std::uint32_t>(j);
    MemberDrivers drivers;
    drivers.brownian = sample_brownian(
        grid, stream_seed(bundle.master_seed, bundle.noise_index, StreamPurpose::kBrownian, member), bundle.spec.brownian_dim);
    drivers.jumps = sample_jumps(bundle.spec.jumps, grid.horizon,
                                 stream_seed(bundle.master_seed, bundle.noise_index, StreamPurpose::kJumps, member));
    out.push_back(std::move(drivers));
  }
  return out;
}

ConditionalEnsemble operational_ensemble(const PathBundle& bundle, const std::vector<MemberDrivers>& drivers) {
  ConditionalEnsemble ens;
  ens.clock = operational_clock(bundle.subordinator);
  ens.d = bundle.spec.brownian_dim;
  const std::size_t steps = ens.clock.steps();
  const auto d = static_cast<std::size_t>(ens.d);
  for (const auto& member : drivers) {
    require(member.brownian.size() >= steps + 1, "member Brownian path shorter than E_T");
    MemberNoise noise;
    noise.dB.resize(steps * d);
    for (std::size_t i = 0; i < steps; ++i)
      for (std::size_t j = 0; j < d; ++j)
        noise.dB[i * d + j] = member.brownian.values[(i + 1) * d + j] - member.brownian.values[i * d + j];
    noise.jump_offsets = bin_events(member.jumps, member.brownian.grid, steps);
    for (std::size_t e = 0; e < noise.jump_offsets.back(); ++e) noise.marks.push_back(member.jumps.events[e].z);
    ens.members.push_back(std::move(noise));
  }
  return ens;
}

ConditionalEnsemble calendar_ensemble(const PathBundle& bundle, const std::vector<MemberDrivers>& drivers,
                                      const InversePath& inverse) {
  ConditionalEnsemble ens;
  ens.clock = calendar_clock(bundle.subordinator, inverse);
  ens.d = bundle.spec.brownian_dim;
  const std::size_t steps = ens.clock.steps();
  const auto d = static_cast<std::size_t>(ens.d);
  for (const auto& member : drivers) {
    // Composed drivers B_{E_t} and N(dz, dE_t).
    const std::vector<double> composed = compose_time_change(member.brownian, inverse);
    MemberNoise noise;
    noise.dB.resize(steps * d);
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t j = 0; j < d; ++j) noise.dB[k * d + j] = composed[(k + 1) * d + j] - composed[k * d + j];
    CalendarJumps jumps = compose_jumps(member.jumps, inverse);
    noise.jump_offsets = std::move(jumps.offsets);
    noise.marks = std::move(jumps.marks);
    ens.members.push_back(std::move(noise));
  }
  return ens;
}

}  // namespace tcfbsde
