#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcfbsde/smp.hpp"

namespace tcfbsde {

struct GapRow {
  std::string label;
  double cost = 0.0, cost_se = 0.0;
  double gap = 0.0, gap_se = 0.0;  // J(candidate) - J(reference), paired per path
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  nlohmann::json data;
};

/// Aggregated optimality evidence plus the parameters that produced it.
struct OptimalityReport {
  std::string model;
  std::uint64_t master_seed = 0;
  std::size_t ensemble = 0;
  std::size_t inner_paths = 0;
  double du = 0.0;
  double horizon = 0.0;
  double reference_cost = 0.0, reference_se = 0.0;
  std::optional<MarginReport> margins;
  std::vector<GapRow> gap_table;
  std::vector<ConvergenceRow> convergence_table;
  std::vector<RemainderRow> remainder_table;
  std::vector<CheckResult> checks;

  bool passed() const;
};

nlohmann::json to_json(const OptimalityReport& report);
std::string to_text(const OptimalityReport& report);

}  // namespace tcfbsde
