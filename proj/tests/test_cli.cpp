#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "omfbm/cli.hpp"

using namespace omfbm;
using namespace omfbm::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "omfbm");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("omfbm_cli_" + name);
  fs::remove_all(p);
  return p;
}

fs::path write_cfg(const std::string& name, const std::string& text) {
  fs::path p = fs::temp_directory_path() / ("omfbm_cli_" + name + ".cfg");
  std::ofstream(p) << text;
  return p;
}

std::string source_dir() { return OMFBM_SOURCE_DIR; }

}  // namespace

TEST(Cli, FbmSampleWritesPathsAndManifest) {
  auto dir = scratch("fbm");
  auto r = run({"fbm-sample", "--hurst", "0.35", "--n", "512", "--paths", "100", "--seed", "7", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"manifest.json", "config.json", "paths.csv", "summary.txt"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream is(dir / "paths.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 100);
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  EXPECT_EQ(rows, 513u);
  auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["N"], 512);
  EXPECT_EQ(m["n_paths"], 100);
  EXPECT_EQ(m["config_hash"], git_blob_hash(slurp(dir / "config.json")));
  fs::remove_all(dir);
}

TEST(Cli, HurstOneHalfRejected) {
  auto r = run({"fbm-sample", "--hurst", "0.5", "--out", scratch("half").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("hurst"), std::string::npos);
  EXPECT_NE(r.err.find("1/2"), std::string::npos);
  EXPECT_FALSE(fs::exists(scratch("half")));
  EXPECT_EQ(run({"fbm-sample", "--hurst", "1.2"}).code, 2);
}

TEST(Cli, SameSeedSameFilesAnyWorkers) {
  auto a = scratch("det_a"), b = scratch("det_b");
  ASSERT_EQ(run({"fbm-sample", "--hurst", "0.7", "--n", "64", "--paths", "40", "--seed", "3", "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"fbm-sample", "--hurst", "0.7", "--n", "64", "--paths", "40", "--seed", "3", "--workers", "3", "--out",
                 b.string()})
                .code,
            0);
  for (const char* f : {"manifest.json", "config.json", "paths.csv", "summary.txt"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, ActionEvalExample1ConstantPath) {
  auto dir = scratch("ae1");
  auto r = run({"action-eval", "--config", source_dir() + "/examples/example1.cfg", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_NEAR(rep["total"].get<double>(), HurstParams::make(0.35).d_H, 1e-10);
  EXPECT_EQ(rep["regime"], "singular");
  fs::remove_all(dir);
}

TEST(Cli, ActionEvalZeroDriftIsKinetic) {
  auto cfg = write_cfg("zero", R"({"hurst": 0.7, "T": 2.0, "n": 128, "drift": "zero", "y0": 0.5,
                                   "path": {"phi2_dot": [1.5]}})");
  auto dir = scratch("zero");
  auto r = run({"action-eval", "--config", cfg.string(), "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_NEAR(rep["total"].get<double>(), -0.5 * 1.5 * 1.5 * 2.0, 1e-12);
  fs::remove_all(dir);
}

TEST(Cli, RegimeMismatchRejected) {
  auto r = run({"action-eval", "--hurst", "0.3", "--regime", "regular", "--dry-run"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("regime"), std::string::npos);
}

TEST(Cli, GammaHolderExponentWindow) {
  auto ok = [](const std::string& h, const std::string& b) {
    return run({"gamma", "--hurst", h, "--norm", "holder", "--beta", b, "--dry-run"}).code;
  };
  EXPECT_EQ(ok("0.35", "0.05"), 0);
  EXPECT_EQ(ok("0.35", "0.1"), 2);
  EXPECT_EQ(ok("0.35", "0.2"), 2);
  EXPECT_EQ(ok("0.7", "0.3"), 0);
  EXPECT_EQ(ok("0.7", "0.15"), 2);
  EXPECT_EQ(ok("0.7", "0.45"), 2);
  EXPECT_EQ(run({"smallball", "--hurst", "0.35", "--norm", "holder", "--beta", "0.2", "--dry-run"}).code, 0);
}

TEST(Cli, UnknownKeysNamed) {
  auto cfg = write_cfg("typo", R"({"hurst": 0.35, "hurts": 0.4})");
  auto r = run({"action-eval", "--config", cfg.string(), "--dry-run"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'hurts'"), std::string::npos);
  cfg = write_cfg("typo2", R"({"hurst": 0.35, "drift": {"name": "linear", "lamda": 1}})");
  r = run({"action-eval", "--config", cfg.string(), "--dry-run"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("drift.lamda"), std::string::npos);
  cfg = write_cfg("typo3", R"({"hurst": 0.35, "mpp": {"paths": 100}})");
  r = run({"mpp", "--config", cfg.string(), "--dry-run"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mpp.paths"), std::string::npos);
  r = run({"action-eval", "--config", write_cfg("bad", "{ not json").string()});
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ConfigRoundTripStable) {
  for (const char* ex : {"example1.cfg", "example2.cfg"}) {
    auto file = load_config_file(source_dir() + "/examples/" + ex);
    for (const auto& c : command_names()) {
      if (!file.contains(c)) continue;
      auto r = resolve_config(c, file);
      std::string text = canonical_text(r);
      auto again = resolve_config(c, ojson::parse(text));
      EXPECT_EQ(canonical_text(again), text) << ex << " " << c;
    }
  }
}

TEST(Cli, DryRunPrintsPlanOnly) {
  auto dir = scratch("dry");
  auto r = run({"gamma", "--config", source_dir() + "/examples/example1.cfg", "--dry-run", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("plan: gamma"), std::string::npos);
  EXPECT_NE(r.out.find("gamma_compare.csv"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Cli, StructuralFailureExitCode) {
  auto cfg = write_cfg("stiff", R"({"hurst": 0.35, "n": 8, "kind": "degenerate", "x0": 1, "y0": 1,
                                    "sigma": {"name": "affine", "x": 40}})");
  auto r = run({"action-eval", "--config", cfg.string(), "--out", scratch("stiff").string()});
  EXPECT_EQ(r.code, 3);
  fs::remove_all(scratch("stiff"));
}

TEST(Cli, SolverFailureExitCode) {
  auto dir = scratch("solver");
  auto cfg = write_cfg("solver", R"({"hurst": 0.35, "n": 64, "y0": 1, "mpp": {"max_iters": 1}})");
  auto r = run({"mpp", "--config", cfg.string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_TRUE(fs::exists(dir / "summary.txt"));
  fs::remove_all(dir);
}

TEST(Cli, StatisticalFailureExitCode) {
  auto dir = scratch("stat");
  auto cfg = write_cfg("stat", R"({"hurst": 0.35, "n": 32, "y0": 1, "paths": 200, "epsilon_list": [0.01, 0.02]})");
  EXPECT_EQ(run({"gamma", "--config", cfg.string(), "--out", dir.string()}).code, 5);
  EXPECT_EQ(run({"smallball", "--config", cfg.string(), "--out", dir.string()}).code, 5);
  fs::remove_all(dir);
}

TEST(Cli, MppOutputs) {
  auto dir = scratch("mpp");
  auto r = run({"mpp", "--config", source_dir() + "/examples/example2.cfg", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"manifest.json", "config.json", "path.csv", "iterations.csv", "report.json", "el_residual.csv",
                        "summary.txt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  fs::remove_all(dir);
}

TEST(Cli, GammaPipelineDeterministicAcrossWorkers) {
  auto cfg = write_cfg("gdet", R"({"hurst": 0.35, "n": 32, "y0": 1, "seed": 9,
    "gamma": {"paths": 2000, "compare_path": {"phi2_dot": [1.0]}, "epsilon": {"eps0": 1.5, "factor": 0.7, "count": 4}},
    "smallball": {"paths": 2000, "epsilon": {"eps0": 1.5, "factor": 0.9, "count": 10}}})");
  auto a = scratch("gdet_a"), b = scratch("gdet_b");
  ASSERT_EQ(run({"run", "--config", cfg.string(), "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"run", "--config", cfg.string(), "--out", b.string(), "--workers", "4"}).code, 0);
  std::size_t files = 0;
  for (auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_GE(files, 9u);
  fs::remove_all(a);
  fs::remove_all(b);
}
