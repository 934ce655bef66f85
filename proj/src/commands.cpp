#include "tcfbsde/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tcfbsde/format.hpp"

namespace tcfbsde {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

fs::path prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), "cannot create output directory '" + dir.string() + "'");
  return dir;
}

/// Writes `bytes` and returns their checksum.
std::string write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open '" + path.string() + "' for writing");
  out << bytes;
  out.close();
  require(!out.fail(), "write to '" + path.string() + "' failed");
  return fnv1a_hex(bytes);
}

std::string index_name(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

double inverse_moment_oracle(const SubordinatorSpec& s, double t) {
  return std::pow(t, s.alpha) / (s.scale * std::tgamma(1.0 + s.alpha));
}

ControlPolicy base_policy(const ExperimentConfig& cfg, const ModelSpec& model) {
  if (cfg.model == "cash") return cash_optimal_policy(make_cash(cfg));
  return fixed_policy(ControlProcess::constant(model.control_set.project(constant(model.dims.k, cfg.verify.base_control))));
}

std::string ratio_list(const std::vector<double>& r) {
  std::string out;
  for (std::size_t i = 0; i < r.size(); ++i) out += (i ? ", " : "") + format_double(r[i]);
  return "[" + out + "]";
}

}  // namespace

SimulateResult run_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = prepare_dir(cfg.output);
  const BundleSpec spec = make_bundle_spec(cfg);
  const std::vector<double> calendar = uniform_calendar_grid(cfg.horizon, cfg.calendar_points);

  json paths = json::array();
  std::vector<double> passage(cfg.ensemble);
  for (std::size_t i = 0; i < cfg.ensemble; ++i) {
    const PathBundle b = make_bundle(spec, cfg.master_seed, i);
    const InversePath inv = invert_subordinator(b.subordinator, calendar);
    const fs::path dir = prepare_dir(out / "paths" / ("path_" + index_name(i)));
    std::ostringstream sub, bm, jp;
    write_subordinator_csv(sub, b.subordinator, inv);
    write_brownian_csv(bm, b.brownian);
    write_jumps_csv(jp, b.jumps);
    json files = json::object();
    const std::string rel = "paths/path_" + index_name(i) + "/";
    files[rel + "subordinator.csv"] = write_file(dir / "subordinator.csv", sub.str());
    files[rel + "brownian.csv"] = write_file(dir / "brownian.csv", bm.str());
    files[rel + "jumps.csv"] = write_file(dir / "jumps.csv", jp.str());
    passage[i] = b.subordinator.passage_time();
    paths.push_back({{"index", i},
                     {"seeds",
                      {{"subordinator", stream_seed(cfg.master_seed, i, StreamPurpose::kSubordinator)},
                       {"brownian", stream_seed(cfg.master_seed, i, StreamPurpose::kBrownian)},
                       {"jumps", stream_seed(cfg.master_seed, i, StreamPurpose::kJumps)}}},
                     {"passage_time", passage[i]},
                     {"jump_count", b.jumps.events.size()},
                     {"files", files}});
  }
  const CostEstimate est = summarize(passage);
  const double oracle = inverse_moment_oracle(cfg.subordinator, cfg.horizon);
  // The output location is not part of the data.
  json config = to_json(cfg);
  config.erase("output");
  json manifest = {{"schema", kConfigSchema},
                   {"command", "simulate"},
                   {"config", config},
                   {"paths", paths},
                   {"summary",
                    {{"mean_E_T", est.mean},
                     {"std_error", est.std_error},
                     {"oracle_mean_E_T", oracle},
                     {"within_3_std_errors", std::abs(est.mean - oracle) <= 3.0 * est.std_error}}}};
  SimulateResult result;
  result.manifest_path = (out / "manifest.json").string();
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  result.mean_passage = est.mean;
  result.passage_se = est.std_error;
  return result;
}

VerifyResult run_verify(const ExperimentConfig& cfg) {
  cfg.validate();
  const ModelSpec model = make_model(cfg);
  const BundleSpec spec = make_bundle_spec(cfg);
  const EnsemblePlan plan{spec, cfg.master_seed, cfg.ensemble};
  const SolverConfig& solver = cfg.solver;
  const Tolerances& tol = cfg.tolerances;
  const ControlPolicy u = base_policy(cfg, model);
  const ControlProcess v = ControlProcess::constant(constant(model.dims.k, cfg.verify.direction));

  VerifyResult result;
  OptimalityReport& rep = result.report;
  rep.model = cfg.model;
  rep.master_seed = cfg.master_seed;
  rep.ensemble = cfg.ensemble;
  rep.inner_paths = solver.inner_paths;
  rep.du = cfg.du;
  rep.horizon = cfg.horizon;

  if (cfg.checks.duality) {
    double worst = 0.0;
    for (std::size_t i = 0; i < plan.size; ++i) {
      const PathBundle b = plan.bundle(i);
      worst = std::max(worst, duality_round_trip(model, u(b), b, solver, cfg.verify.inject_fault).max());
    }
    rep.checks.push_back({"duality", worst <= tol.duality,
                          "max discrepancy " + format_double(worst) + " (tolerance " + format_double(tol.duality) + ")",
                          {{"max_discrepancy", worst}}});
  }

  if (cfg.checks.gateaux) {
    rep.convergence_table = gateaux_consistency_check(model, u, v, cfg.verify.rhos, plan, solver);
    std::vector<double> ratios;
    bool ok = true;
    const auto& rows = rep.convergence_table;
    for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
      const double ratio = rows[r].difference / rows[r + 1].difference;
      ratios.push_back(ratio);
      const bool both_floor = rows[r].difference <= tol.remainder_floor && rows[r + 1].difference <= tol.remainder_floor;
      ok = ok && (both_floor || (ratio >= tol.gateaux_ratio_lo && ratio <= tol.gateaux_ratio_hi));
    }
    rep.checks.push_back({"gateaux", ok, "difference ratios " + ratio_list(ratios), {{"ratios", ratios}}});
  }

  if (cfg.checks.remainders) {
    rep.remainder_table = remainder_convergence_check(model, u, v, cfg.verify.rhos, plan, solver, cfg.calendar_points);
    const auto& rows = rep.remainder_table;
    bool ok = true;
    std::string detail;
    if (model.flags.linear) {
      double worst = 0.0;
      for (const auto& r : rows) worst = std::max({worst, r.x, r.y, r.a, r.r});
      ok = worst <= tol.remainder_floor;
      detail = "linear model: largest entry " + format_double(worst);
    } else {
      std::vector<double> ratios;
      for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
        const auto& a = rows[r];
        const auto& b = rows[r + 1];
        const auto mono = [](double hi, double hi_se, double lo, double lo_se) {
          return lo - hi <= std::max(hi_se, lo_se);
        };
        ok = ok && mono(a.x, a.x_se, b.x, b.x_se) && mono(a.y, a.y_se, b.y, b.y_se) && mono(a.a, a.a_se, b.a, b.a_se) &&
             mono(a.r, a.r_se, b.r, b.r_se);
        const double ratio = a.x / b.x;
        ratios.push_back(ratio);
        ok = ok && ratio >= tol.remainder_ratio_lo && ratio <= tol.remainder_ratio_hi;
      }
      detail = "X column ratios " + ratio_list(ratios);
    }
    rep.checks.push_back({"remainders", ok, detail, {}});
  }

  if (cfg.checks.maxcond) {
    std::vector<Candidate> cands = sample_candidates(
        model.control_set, cfg.verify.candidates, stream_seed(cfg.master_seed, 0, StreamPurpose::kCandidates), cfg.horizon);
    if (cfg.model == "cash") {
      const CashSpec cash = make_cash(cfg);
      rep.margins = check_necessary_condition(model, u, cands, plan, solver, cash_adjoint_provider(cash));
      const bool ok = rep.margins->min_margin >= -tol.std_errors * rep.margins->std_error - tol.maxcond_floor;
      rep.checks.push_back({"maxcond", ok,
                            "min margin " + format_double(rep.margins->min_margin) + " +- " +
                                format_double(rep.margins->std_error) + " (witness " + rep.margins->witness + ")",
                            {}});
    } else {
      // No known optimum: the margins are reported, the identity v = u must give 0.
      cands.push_back({"u", u(plan.bundle(0))});
      rep.margins = check_necessary_condition(model, u, cands, plan, solver);
      const double identity = rep.margins->rows.back().margin;
      rep.checks.push_back({"maxcond", identity == 0.0,
                            "margin at v = u is " + format_double(identity) + "; min margin " +
                                format_double(rep.margins->min_margin) + " (informational, no known optimum)",
                            {}});
    }
  }

  if (cfg.checks.gronwall) {
    double worst = 0.0;
    const Vec delta = constant(model.dims.n, cfg.verify.gronwall_delta);
    for (std::size_t i = 0; i < plan.size; ++i) {
      const PathBundle b = plan.bundle(i);
      worst = std::max(worst, gronwall_ratio(model, u(b), b, delta, solver));
    }
    rep.checks.push_back({"gronwall", worst <= tol.gronwall_headroom,
                          "max |dX|^2 / (|delta|^2 exp(C E)) = " + format_double(worst), {{"max_ratio", worst}}});
  }

  if (cfg.checks.ito) {
    ScalarField F;
    F.value = [](double, double, const Vec& x) { return x.squaredNorm(); };
    F.d_t1 = [](double, double, const Vec&) { return 0.0; };
    F.d_t2 = [](double, double, const Vec&) { return 0.0; };
    F.grad_x = [](double, double, const Vec& x) -> Vec { return 2.0 * x; };
    F.hess_x = [](double, double, const Vec& x) -> Mat { return 2.0 * Mat::Identity(x.size(), x.size()); };
    BundleSpec fine = spec;
    fine.du = spec.du / 2.0;
    fine.alignment = 2;
    std::vector<double> coarse_res(plan.size), fine_res(plan.size);
    for (std::size_t i = 0; i < plan.size; ++i) {
      const PathBundle bf = make_bundle(fine, cfg.master_seed, i);
      const PathBundle bc = coarsen(bf, 2);
      // Conditional mean over the inner members; the coarse members aggregate the fine increments.
      const std::vector<MemberDrivers> fd = sample_members(bf, solver.inner_paths);
      std::vector<MemberDrivers> cd = fd;
      for (auto& m : cd) m.brownian = coarsen(m.brownian, 2);
      fine_res[i] = ito_terminal_residual(model, u(bf), bf, fd, F, solver);
      coarse_res[i] = ito_terminal_residual(model, u(bc), bc, cd, F, solver);
    }
    const CostEstimate c = summarize(coarse_res), f = summarize(fine_res);
    const double ratio = f.mean / c.mean;
    rep.checks.push_back({"ito", ratio >= tol.ito_ratio_lo && ratio <= tol.ito_ratio_hi,
                          "mean residual(T) " + format_double(c.mean) + " at du, " + format_double(f.mean) +
                              " at du/2, ratio " + format_double(ratio),
                          {{"coarse", c.mean}, {"coarse_se", c.std_error}, {"fine", f.mean}, {"fine_se", f.std_error}}});
  }

  if (cfg.checks.independence) {
    std::vector<PathBundle> natural, permuted;
    std::vector<std::size_t> perm(plan.size);
    for (std::size_t i = 0; i < plan.size; ++i) perm[i] = i;
    Rng rng(stream_seed(cfg.master_seed, 0, StreamPurpose::kCandidates, 1));
    for (std::size_t i = plan.size; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_u64() % i]);
    for (std::size_t i = 0; i < plan.size; ++i) {
      natural.push_back(make_bundle(spec, cfg.master_seed, i));
      permuted.push_back(make_bundle(spec, cfg.master_seed, i, perm[i]));
    }
    const CostEstimate a = evaluate_cost(model, u, natural, solver);
    const CostEstimate b = evaluate_cost(model, u, permuted, solver);
    const KsResult ks = ks_two_sample(a.per_path, b.per_path);
    rep.checks.push_back({"independence", ks.p_value > tol.ks_p_value,
                          "KS statistic " + format_double(ks.statistic) + ", p = " + format_double(ks.p_value),
                          {{"statistic", ks.statistic}, {"p_value", ks.p_value}}});
  }

  const fs::path out = prepare_dir(cfg.output);
  write_file(out / "report.json", to_json(rep).dump(2) + "\n");
  write_file(out / "report.txt", to_text(rep));
  result.status = rep.passed() ? 0 : 1;
  return result;
}

OptimalityReport run_cash_demo(const ExperimentConfig& cfg) {
  cfg.validate();
  const CashSpec spec = make_cash(cfg);
  const fs::path out = prepare_dir(cfg.output);

  std::vector<CandidatePolicy> candidates;
  for (const auto& c : cfg.cash_demo.candidates) {
    switch (c.kind) {
      case CandidateSpec::Kind::kBenchmark:
        candidates.push_back({c.label, cash_benchmark_policy(spec)});
        break;
      case CandidateSpec::Kind::kShift:
        candidates.push_back({c.label, shifted_policy(cash_optimal_policy(spec), ControlProcess::constant(constant(1, 1.0)),
                                                      c.value)});
        break;
      case CandidateSpec::Kind::kConstant:
        candidates.push_back({c.label, fixed_policy(ControlProcess::constant(constant(1, c.value)))});
        break;
    }
  }
  CertifyOptions options;
  options.ensemble = cfg.ensemble;
  options.seed = cfg.master_seed;
  options.maxcond_candidates = cfg.verify.candidates;
  options.solver = cfg.solver;
  OptimalityReport report = certify_optimality(spec, candidates, options);

  // Per-path adjoint and control tables.
  const BundleSpec bspec = cash_bundle_spec(spec);
  const fs::path dir = prepare_dir(out / "paths");
  for (std::size_t i = 0; i < std::min(cfg.cash_demo.export_paths, cfg.ensemble); ++i) {
    const PathBundle b = make_bundle(bspec, cfg.master_seed, i);
    const AdjointSolution adj = cash_adjoints(spec, b);
    std::ostringstream os;
    os << "u,D,p,q,k,control\n";
    for (std::size_t n = 0; n < adj.grid.size(); ++n) {
      const double k = n + 1 < adj.grid.size() ? adj.k[n](0, 0) : 0.0;
      os << format_double(adj.grid[n]) << ',' << format_double(adj.t1[n]) << ',' << format_double(adj.p[n](0)) << ','
         << format_double(adj.q[n](0)) << ',' << format_double(k) << ','
         << format_double(spec.control_set.project(constant(1, cash_control_value(spec, adj, n)))(0)) << '\n';
    }
    write_file(dir / ("adjoint_" + index_name(i) + ".csv"), os.str());
  }

  // Ensemble means with 95% bands on a uniform calendar grid.
  const std::vector<double> grid = uniform_calendar_grid(cfg.horizon, cfg.calendar_points);
  const std::size_t G = grid.size();
  std::vector<std::vector<double>> us(G), ps(G), qs(G);
  for (std::size_t i = 0; i < cfg.ensemble; ++i) {
    const PathBundle b = make_bundle(bspec, cfg.master_seed, i);
    const AdjointSolution adj = cash_adjoints(spec, b);
    const InversePath inv = invert_subordinator(b.subordinator, grid);
    for (std::size_t g = 0; g < G; ++g) {
      const std::size_t n = inv.indices[g];
      us[g].push_back(spec.control_set.project(constant(1, cash_control_value(spec, adj, n)))(0));
      ps[g].push_back(adj.p[n](0));
      qs[g].push_back(adj.q[n](0));
    }
  }
  std::ostringstream plot;
  plot << "series,t,value,lo,hi\n";
  const auto emit = [&](const char* name, std::vector<std::vector<double>>& series) {
    for (std::size_t g = 0; g < G; ++g) {
      const CostEstimate e = summarize(std::move(series[g]));
      plot << name << ',' << format_double(grid[g]) << ',' << format_double(e.mean) << ','
           << format_double(e.mean - 1.96 * e.std_error) << ',' << format_double(e.mean + 1.96 * e.std_error) << '\n';
    }
  };
  emit("u_star", us);
  emit("p", ps);
  emit("q", qs);
  write_file(out / "plot_data.csv", plot.str());
  write_file(out / "report.json", to_json(report).dump(2) + "\n");
  write_file(out / "report.txt", to_text(report));
  return report;
}

}  // namespace tcfbsde
