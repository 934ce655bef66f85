#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcfbsde/models.hpp"

namespace tcfbsde {

inline constexpr const char* kConfigSchema = "tcfbsde/1";

struct CheckSelection {
  bool duality = false;
  bool gateaux = false;
  bool remainders = false;
  bool maxcond = false;
  bool gronwall = false;
  bool ito = false;
  bool independence = false;

  bool any() const { return duality || gateaux || remainders || maxcond || gronwall || ito || independence; }
};

struct Tolerances {
  double duality = 1e-8;
  double std_errors = 3.0;
  double gronwall_headroom = 1.1;
  double ito_ratio_lo = 0.35, ito_ratio_hi = 0.7;
  double gateaux_ratio_lo = 1.5, gateaux_ratio_hi = 3.0;
  double remainder_ratio_lo = 2.5, remainder_ratio_hi = 6.0;
  double remainder_floor = 1e-12;
  double maxcond_floor = 1e-10;
  double ks_p_value = 0.01;
};

struct VerifyOptions {
  std::vector<double> rhos{0.2, 0.1, 0.05, 0.025};
  double base_control = 0.5;  // constant base control (the cash model uses u*)
  double direction = 1.0;     // constant perturbation direction
  std::size_t candidates = 64;
  double gronwall_delta = 0.1;
  bool inject_fault = false;  // flips the drift sign in the calendar route
};

/// Cash-demo candidate: a constant control, u* shifted by a constant, or the
/// benchmark kappa.
struct CandidateSpec {
  enum class Kind { kConstant, kShift, kBenchmark };
  std::string label;
  Kind kind = Kind::kConstant;
  double value = 0.0;
};

struct CashDemoOptions {
  std::vector<CandidateSpec> candidates{{"kappa", CandidateSpec::Kind::kBenchmark, 0.0},
                                        {"u*+0.1", CandidateSpec::Kind::kShift, 0.1},
                                        {"u*+0.2", CandidateSpec::Kind::kShift, 0.2},
                                        {"constant(0)", CandidateSpec::Kind::kConstant, 0.0}};
  std::size_t export_paths = 5;
};

struct ExperimentConfig {
  std::string model = "linear_test";
  ParamTable params;
  SubordinatorSpec subordinator;
  LevyJumpSpec jumps;
  double horizon = 1.0;
  double du = 1e-2;
  std::size_t calendar_points = 101;
  std::size_t ensemble = 100;
  std::uint64_t master_seed = 1;
  SolverConfig solver;
  std::string output = "out";
  CheckSelection checks;
  Tolerances tolerances;
  VerifyOptions verify;
  CashDemoOptions cash_demo;

  void validate() const;
};

/// Strict parse: unknown keys and wrong types are errors. Missing keys keep defaults.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

ModelSpec make_model(const ExperimentConfig& config);
CashSpec make_cash(const ExperimentConfig& config);
BundleSpec make_bundle_spec(const ExperimentConfig& config);

}  // namespace tcfbsde
