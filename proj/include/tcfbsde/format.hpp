#pragma once

#include <charconv>
#include <string>

namespace tcfbsde {

/// Shortest round-trip decimal representation; locale independent.
inline std::string format_double(double value) {
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

}  // namespace tcfbsde
