#pragma once

#include <cstdint>
#include <string>

#include "tcfbsde/config.hpp"
#include "tcfbsde/report.hpp"

namespace tcfbsde {

/// 64-bit FNV-1a, written as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

struct SimulateResult {
  std::string manifest_path;
  double mean_passage = 0.0;  // mean E(T)
  double passage_se = 0.0;
};

/// Writes per-path subordinator, inverse, Brownian and jump CSVs plus manifest.json.
SimulateResult run_simulate(const ExperimentConfig& config);

/// Runs the selected checks; writes report.json and report.txt. Status 0 iff all pass.
struct VerifyResult {
  OptimalityReport report;
  int status = 0;
};
VerifyResult run_verify(const ExperimentConfig& config);

/// Cash certification with per-path adjoint/control CSVs, the report and plot data.
OptimalityReport run_cash_demo(const ExperimentConfig& config);

}  // namespace tcfbsde
