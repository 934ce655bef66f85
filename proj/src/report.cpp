#include "tcfbsde/report.hpp"

#include <cstdio>
#include <sstream>

namespace tcfbsde {

bool OptimalityReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

nlohmann::json to_json(const OptimalityReport& r) {
  using nlohmann::json;
  json out;
  out["model"] = r.model;
  out["master_seed"] = r.master_seed;
  out["ensemble"] = r.ensemble;
  out["inner_paths"] = r.inner_paths;
  out["du"] = r.du;
  out["horizon"] = r.horizon;
  out["reference_cost"] = {{"mean", r.reference_cost}, {"std_error", r.reference_se}};
  if (r.margins) {
    json rows = json::array();
    for (const auto& m : r.margins->rows) rows.push_back({{"label", m.label}, {"margin", m.margin}, {"std_error", m.std_error}});
    out["necessary_condition"] = {{"min_margin", r.margins->min_margin},
                                  {"std_error", r.margins->std_error},
                                  {"witness", r.margins->witness},
                                  {"candidates", rows}};
  }
  json gaps = json::array();
  for (const auto& g : r.gap_table)
    gaps.push_back({{"label", g.label}, {"cost", g.cost}, {"cost_se", g.cost_se}, {"gap", g.gap}, {"gap_se", g.gap_se}});
  out["gap_table"] = gaps;
  json conv = json::array();
  for (const auto& c : r.convergence_table)
    conv.push_back({{"rho", c.rho},
                    {"quotient", c.quotient},
                    {"quotient_se", c.quotient_se},
                    {"linearized", c.linearized},
                    {"linearized_se", c.linearized_se},
                    {"difference", c.difference},
                    {"difference_se", c.difference_se}});
  out["convergence_table"] = conv;
  json rem = json::array();
  for (const auto& c : r.remainder_table)
    rem.push_back({{"rho", c.rho}, {"x", c.x}, {"x_se", c.x_se}, {"y", c.y}, {"y_se", c.y_se},
                   {"a", c.a}, {"a_se", c.a_se}, {"r", c.r}, {"r_se", c.r_se}});
  out["remainder_table"] = rem;
  json checks = json::array();
  for (const auto& c : r.checks) {
    json entry = {{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}};
    if (!c.data.is_null()) entry["data"] = c.data;
    checks.push_back(entry);
  }
  out["checks"] = checks;
  out["passed"] = r.passed();
  return out;
}

namespace {

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

}  // namespace

std::string to_text(const OptimalityReport& r) {
  std::ostringstream os;
  os << "model " << r.model << "  seed " << r.master_seed << "  paths " << r.ensemble << "  inner " << r.inner_paths
     << "  du " << fmt("%g", r.du) << "  T " << fmt("%g", r.horizon) << "\n";
  if (!r.gap_table.empty()) {
    os << "reference cost " << fmt("%.6f", r.reference_cost) << " +- " << fmt("%.2e", r.reference_se) << "\n";
    os << "gap table (J(candidate) - J(reference))\n";
    for (const auto& g : r.gap_table)
      os << "  " << g.label << "  " << fmt("%+.6e", g.gap) << " +- " << fmt("%.2e", g.gap_se) << "\n";
  }
  if (r.margins) {
    os << "maximum condition: min margin " << fmt("%+.6e", r.margins->min_margin) << " +- "
       << fmt("%.2e", r.margins->std_error) << "  witness " << r.margins->witness << " ("
       << r.margins->rows.size() << " candidates)\n";
  }
  if (!r.convergence_table.empty()) {
    os << "gateaux table: rho  quotient  linearized  |difference|\n";
    for (const auto& c : r.convergence_table)
      os << "  " << fmt("%-8g", c.rho) << fmt("%+.6e", c.quotient) << "  " << fmt("%+.6e", c.linearized) << "  "
         << fmt("%.3e", c.difference) << " +- " << fmt("%.1e", c.difference_se) << "\n";
  }
  if (!r.remainder_table.empty()) {
    os << "remainder table: rho  sup E|X~|^2  sup E|Y~|^2  E int|A~|^2  E int|r~|^2\n";
    for (const auto& c : r.remainder_table)
      os << "  " << fmt("%-8g", c.rho) << fmt("%.4e", c.x) << "  " << fmt("%.4e", c.y) << "  " << fmt("%.4e", c.a)
         << "  " << fmt("%.4e", c.r) << "\n";
  }
  for (const auto& c : r.checks) os << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  return os.str();
}

}  // namespace tcfbsde
