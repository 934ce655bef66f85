#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "tcfbsde/commands.hpp"
#include "tcfbsde/config.hpp"

using namespace tcfbsde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tcfbsde_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(TCFBSDE_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.ensemble = 4;
  cfg.output = out.string();
  return cfg;
}

}  // namespace

TEST(Config, RoundTripIsStable) {
  ExperimentConfig cfg;
  cfg.model = "quadratic_drift";
  cfg.params["a"] = 0.3;
  cfg.ensemble = 17;
  cfg.master_seed = 99;
  cfg.checks.ito = true;
  cfg.tolerances.duality = 1e-7;
  cfg.verify.rhos = {0.4, 0.2};
  const nlohmann::json doc = to_json(cfg);
  const ExperimentConfig back = parse_config(doc);
  EXPECT_EQ(to_json(back), doc);
  EXPECT_EQ(back.ensemble, 17u);
  EXPECT_EQ(back.master_seed, 99u);
  EXPECT_TRUE(back.checks.ito);
}

TEST(Config, StrictParsing) {
  nlohmann::json doc = to_json(ExperimentConfig{});
  nlohmann::json unknown = doc;
  unknown["grid"]["dx"] = 0.1;
  EXPECT_THROW(parse_config(unknown), Error);
  nlohmann::json wrong_type = doc;
  wrong_type["ensemble"]["size"] = "ten";
  EXPECT_THROW(parse_config(wrong_type), Error);
  nlohmann::json bad_schema = doc;
  bad_schema["schema"] = "other/0";
  EXPECT_THROW(parse_config(bad_schema), Error);
  nlohmann::json negative = doc;
  negative["grid"]["du"] = -0.01;
  EXPECT_THROW(parse_config(negative), Error);
  EXPECT_NO_THROW(parse_config(nlohmann::json{{"schema", kConfigSchema}}));
}

TEST(Checksum, KnownValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Simulate, ByteIdenticalAcrossRunsAndChecksumsMatch) {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  const SimulateResult ra = run_simulate(small_config(a));
  run_simulate(small_config(b));
  EXPECT_EQ(tree(a), tree(b));
  EXPECT_TRUE(std::isfinite(ra.mean_passage));

  const auto manifest = nlohmann::json::parse(slurp(ra.manifest_path));
  ASSERT_EQ(manifest.at("paths").size(), 4u);
  for (const auto& entry : manifest.at("paths")) {
    ASSERT_EQ(entry.at("files").size(), 3u);
    for (const auto& [file, sum] : entry.at("files").items())
      EXPECT_EQ(fnv1a_hex(slurp(a / file)), sum.get<std::string>()) << file;
  }

  ExperimentConfig other = small_config(scratch("sim_c"));
  other.master_seed = 2;
  run_simulate(other);
  EXPECT_NE(tree(a)["manifest.json"], tree(other.output)["manifest.json"]);
}

TEST(Verify, EmptySelectionSucceedsAndFaultIsDetected) {
  ExperimentConfig cfg = small_config(scratch("verify"));
  EXPECT_EQ(run_verify(cfg).status, 0);
  cfg.checks.duality = true;
  EXPECT_EQ(run_verify(cfg).status, 0);
  cfg.verify.inject_fault = true;
  const VerifyResult faulty = run_verify(cfg);
  EXPECT_NE(faulty.status, 0);
  ASSERT_EQ(faulty.report.checks.size(), 1u);
  EXPECT_FALSE(faulty.report.checks[0].passed);
  EXPECT_TRUE(fs::exists(fs::path(cfg.output) / "report.json"));
}

TEST(CashDemo, DeterministicOutputs) {
  ExperimentConfig cfg;
  cfg.model = "cash";
  cfg.ensemble = 20;
  cfg.verify.candidates = 4;
  cfg.cash_demo.export_paths = 2;
  const fs::path a = scratch("demo_a"), b = scratch("demo_b");
  cfg.output = a.string();
  const OptimalityReport ra = run_cash_demo(cfg);
  cfg.output = b.string();
  run_cash_demo(cfg);
  const auto ta = tree(a);
  EXPECT_EQ(ta, tree(b));
  EXPECT_EQ(ta.count("plot_data.csv"), 1u);
  EXPECT_EQ(ta.count("paths/adjoint_00001.csv"), 1u);
  EXPECT_EQ(ta.count("paths/adjoint_00002.csv"), 0u);
  EXPECT_EQ(ta.at("paths/adjoint_00000.csv").rfind("u,D,p,q,k,control\n", 0), 0u);
  EXPECT_EQ(ra.gap_table.size(), cfg.cash_demo.candidates.size());
}

TEST(Cli, ExitCodes) {
  const fs::path out = scratch("cli");
  EXPECT_EQ(run_cli("simulate --ensemble 2 --out " + (out / "s").string()), 0);
  EXPECT_EQ(run_cli("verify --duality --ensemble 2 --out " + (out / "v").string()), 0);
  EXPECT_NE(run_cli("verify --duality --inject-fault --ensemble 2 --out " + (out / "f").string()), 0);
  std::ofstream(out / "bad.json") << R"({"schema": "tcfbsde/1", "bogus": 1})";
  EXPECT_EQ(run_cli("simulate --config " + (out / "bad.json").string()), 2);
  EXPECT_NE(run_cli("no-such-command"), 0);
  EXPECT_NE(run_cli(""), 0);
}

TEST(Config, ShippedExamplesParse) {
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(fs::path(TCFBSDE_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".json") continue;
    const ExperimentConfig cfg = load_config(e.path().string());
    EXPECT_NO_THROW(make_model(cfg)) << e.path();
    if (cfg.model == "cash") {
      EXPECT_NO_THROW(make_cash(cfg)) << e.path();
    }
    ++count;
  }
  EXPECT_GE(count, 4u);
}
