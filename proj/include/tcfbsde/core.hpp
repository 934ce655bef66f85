#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcfbsde {

/// Upper bound on every model dimension (state, backward, Brownian, control).
/// Vectors and matrices use fixed-capacity storage so the per-step hot loops
/// never touch the heap.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Raised for invalid parameters, violated preconditions and numerical failures
/// (blow-up, rank deficiency). The message names the offending quantity.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

inline Vec zeros(int n) { return Vec::Zero(n); }
inline Vec constant(int n, double value) { return Vec::Constant(n, value); }

}  // namespace tcfbsde
