#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmf/cli.hpp"

using namespace dmf;
namespace fs = std::filesystem;

namespace {

const fs::path kPresets = DMF_PRESETS_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmf_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_tool(const std::string& args) {
  const std::string cmd = std::string(DMF_TOOL) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int train(const fs::path& config, const fs::path& out, const std::string& dataset = "") {
  cli::TrainArgs a;
  a.config = config;
  a.out = out;
  a.dataset = dataset;
  a.quiet = true;
  std::ostringstream o, e;
  return cli::cmd_train(a, o, e);
}

}  // namespace

TEST(Cli, TrainWritesCompleteRunDirectory) {
  const fs::path out = scratch("train");
  ASSERT_EQ(train(kPresets / "smoke.json", out), cli::kExitOk);
  for (const char* f : {"manifest.json", "config.resolved.json", "metrics.csv", "final.ckpt", "stage_0.ckpt", "stage_1.ckpt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const json m = json::parse(slurp(out / "manifest.json"));
  for (const char* k : {"name", "config_path", "dataset", "schedule_preset", "output_dir", "code_version"}) {
    EXPECT_TRUE(m.contains(k)) << k;
  }
  EXPECT_EQ(m.at("status"), "complete");
  const json resolved = json::parse(slurp(out / "config.resolved.json"));
  for (const auto& key : config_keys()) EXPECT_TRUE(resolved.contains(key)) << key;
  fs::remove_all(out);
}

TEST(Cli, NonEmptyOutputNeedsResume) {
  const fs::path out = scratch("nonempty");
  fs::create_directories(out);
  std::ofstream(out / "junk") << "x";
  EXPECT_EQ(train(kPresets / "smoke.json", out), cli::kExitUsage);
  fs::remove_all(out);
}

TEST(Cli, ResumeContinuesFromLatestStage) {
  const fs::path out = scratch("resume");
  ASSERT_EQ(train(kPresets / "smoke.json", out), cli::kExitOk);
  fs::remove(out / "final.ckpt");
  fs::remove(out / "stage_1.ckpt");
  {
    // Keep the header and the two stage-0 rows.
    std::istringstream is(slurp(out / "metrics.csv"));
    std::string line, kept;
    for (int i = 0; i < 3 && std::getline(is, line); ++i) kept += line + "\n";
    std::ofstream(out / "metrics.csv") << kept;
  }
  cli::TrainArgs a;
  a.config = kPresets / "smoke.json";
  a.out = out;
  a.resume = true;
  a.quiet = true;
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_train(a, o, e), cli::kExitOk) << e.str();
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  std::istringstream is(slurp(out / "metrics.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 4);
  fs::remove_all(out);
}

TEST(Cli, BadConfigIsUsageError) {
  const fs::path bad = scratch("bad.json");
  std::ofstream(bad) << R"({"dataset": "gmm-ring", "lr": "fast"})";
  cli::TrainArgs a;
  a.config = bad;
  a.out = scratch("bad_out");
  std::ostringstream o, e;
  EXPECT_EQ(cli::cmd_train(a, o, e), cli::kExitUsage);
  EXPECT_NE(e.str().find("'lr'"), std::string::npos);
  fs::remove(bad);
}

TEST(Cli, MissingDatasetIsUsageError) {
  EXPECT_EQ(train(kPresets / "fm_pretrain.json", scratch("nodata")), cli::kExitUsage);
  EXPECT_EQ(run_tool("train --config " + (kPresets / "cifar_dmf_ve.json").string() + " --out " + scratch("nodata2").string()),
            cli::kExitUsage);
}

TEST(Cli, SeedPrecedence) {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  setenv("DMF_SEED", "17", 1);
  ASSERT_EQ(train(kPresets / "smoke.json", a), cli::kExitOk);
  cli::TrainArgs args;
  args.config = kPresets / "smoke.json";
  args.out = b;
  args.seed = 5;
  args.quiet = true;
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_train(args, o, e), cli::kExitOk);
  unsetenv("DMF_SEED");
  EXPECT_EQ(json::parse(slurp(a / "config.resolved.json")).at("seed"), 17);
  EXPECT_EQ(json::parse(slurp(b / "config.resolved.json")).at("seed"), 5);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, InitFromCheckpoint) {
  const fs::path fm = scratch("fm"), dmf = scratch("dmf_from_fm");
  ASSERT_EQ(train(kPresets / "smoke.json", fm), cli::kExitOk);
  cli::TrainArgs a;
  a.config = kPresets / "smoke.json";
  a.out = dmf;
  a.init_from = fm / "final.ckpt";
  a.quiet = true;
  std::ostringstream o, e;
  EXPECT_EQ(cli::cmd_train(a, o, e), cli::kExitOk) << e.str();
  EXPECT_EQ(json::parse(slurp(dmf / "manifest.json")).at("init_from"), (fm / "final.ckpt").string());
  a.out = scratch("dmf_missing_init");
  a.init_from = fm / "nope.ckpt";
  EXPECT_EQ(cli::cmd_train(a, o, e), cli::kExitUsage);
  fs::remove_all(fm);
  fs::remove_all(dmf);
}

TEST(Cli, SampleOutputsAndDeterminism) {
  const fs::path run = scratch("sample_run"), s1 = scratch("s1"), s2 = scratch("s2");
  ASSERT_EQ(train(kPresets / "smoke.json", run), cli::kExitOk);
  for (std::size_t steps : {1, 50}) {
    cli::SampleArgs a;
    a.ckpt = run / "final.ckpt";
    a.out = s1;
    a.steps = steps;
    a.n = 500;
    a.seed = 7;
    std::ostringstream o, e;
    ASSERT_EQ(cli::cmd_sample(a, o, e), cli::kExitOk) << e.str();
    const std::string tag = "s" + std::to_string(steps);
    EXPECT_TRUE(fs::exists(s1 / ("samples_" + tag + ".csv")));
    EXPECT_TRUE(fs::exists(s1 / ("scatter_" + tag + ".ppm")));
    const json m = json::parse(slurp(s1 / ("metrics_" + tag + ".json")));
    EXPECT_GE(m.at("energy_distance").get<double>(), 0.0);
    EXPECT_EQ(m.at("n_steps"), steps);
  }
  cli::SampleArgs a;
  a.ckpt = run / "final.ckpt";
  a.out = s2;
  a.n = 500;
  a.seed = 7;
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_sample(a, o, e), cli::kExitOk);
  EXPECT_EQ(slurp(s1 / "samples_s1.csv"), slurp(s2 / "samples_s1.csv"));
  EXPECT_EQ(slurp(s1 / "scatter_s1.ppm").substr(0, 2), "P6");
  fs::remove_all(run);
  fs::remove_all(s1);
  fs::remove_all(s2);
}

TEST(Cli, SampleLargeEnergyMetric) {
  const fs::path run = scratch("sample_big"), out = scratch("sample_big_out");
  ASSERT_EQ(train(kPresets / "smoke.json", run), cli::kExitOk);
  EXPECT_EQ(run_tool("sample --ckpt " + (run / "final.ckpt").string() + " --n 10000 --metric energy --out " + out.string()),
            cli::kExitOk);
  const json m = json::parse(slurp(out / "metrics_s1.json"));
  EXPECT_GE(m.at("energy_distance").get<double>(), 0.0);
  fs::remove_all(run);
  fs::remove_all(out);
}

TEST(Cli, SampleMissingCheckpoint) {
  cli::SampleArgs a;
  a.ckpt = scratch("none") / "final.ckpt";
  std::ostringstream o, e;
  EXPECT_EQ(cli::cmd_sample(a, o, e), cli::kExitUsage);
  EXPECT_EQ(run_tool("sample --ckpt /nonexistent/final.ckpt"), cli::kExitUsage);
}

TEST(Cli, EvalSweep) {
  const fs::path run = scratch("eval_run");
  ASSERT_EQ(train(kPresets / "smoke.json", run), cli::kExitOk);
  cli::EvalArgs a;
  a.ckpt = run / "final.ckpt";
  a.out = run / "eval.json";
  a.n = 300;
  std::ostringstream o, e;
  ASSERT_EQ(cli::cmd_eval(a, o, e), cli::kExitOk) << e.str();
  const json rep = json::parse(slurp(run / "eval.json"));
  EXPECT_EQ(rep.at("runs").size(), 5u);
  fs::remove_all(run);
}

TEST(Cli, VerifyExitsZero) {
  const fs::path out = scratch("verify.csv");
  EXPECT_EQ(run_tool("verify --out " + out.string()), cli::kExitOk);
  EXPECT_TRUE(fs::exists(out));
  fs::remove(out);
}

TEST(Cli, BenchWritesCsv) {
  const fs::path out = scratch("bench.csv");
  EXPECT_EQ(run_tool("bench --hidden 32,32 --batch 64 --trials 10 --out " + out.string()), cli::kExitOk);
  std::istringstream is(slurp(out));
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "hidden_dims,batch,trials,fwd_sec_per_batch,mf_sec_per_batch,dmf_sec_per_batch,ratio,dmf_over_fwd,mf_over_fwd");
  EXPECT_EQ(run_tool("bench --trials 3 --out " + out.string()), cli::kExitUsage);
  EXPECT_EQ(run_tool("bench --hidden 32,,3"), cli::kExitUsage);
  fs::remove(out);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_tool(""), cli::kExitUsage);
  EXPECT_EQ(run_tool("frobnicate"), cli::kExitUsage);
  EXPECT_EQ(run_tool("train --out x"), cli::kExitUsage);
  EXPECT_EQ(run_tool("--help"), cli::kExitOk);
}
