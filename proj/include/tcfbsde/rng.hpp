#pragma once

#include <cmath>
#include <cstdint>

namespace tcfbsde {

// Stream derivation
// -----------------
// Every random quantity is drawn from a stream whose seed is
//
//   stream_seed(master, path, purpose, member)
//     = mix(mix(mix(master ^ 0x6a09e667f3bcc909) ^ path) ^ (purpose << 32 | member))
//
// where mix is the SplitMix64 finaliser. `path` is the ensemble index of the
// subordinator path, `purpose` one of StreamPurpose and `member` the index
// inside a conditional ensemble (0 for the bundle's own noise).

enum class StreamPurpose : std::uint32_t {
  kSubordinator = 1,
  kBrownian = 2,
  kJumps = 3,
  kCandidates = 4,
  kCloud = 5,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t path, StreamPurpose purpose,
                                    std::uint32_t member = 0) {
  std::uint64_t s = splitmix64(master ^ 0x6a09e667f3bcc909ULL);
  s = splitmix64(s ^ path);
  const std::uint64_t tag = (static_cast<std::uint64_t>(purpose) << 32) | member;
  return splitmix64(s ^ tag);
}

/// xoshiro256** generator with portable samplers, so that paths are
/// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double k = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * k;
    has_spare_ = true;
    return u * k;
  }

  double exponential() { return -std::log(uniform()); }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tcfbsde
