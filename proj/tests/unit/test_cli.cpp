#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "flowmix/data.hpp"
#include "flowmix/model.hpp"
#include "flowmix/trainer.hpp"
#include "test_util.hpp"

using namespace flowmix;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr together
};

Run run_cli(const std::string& args, const fs::path& cwd = {}) {
  std::string cmd;
  if (!cwd.empty()) cmd = "cd '" + cwd.string() + "' && ";
  cmd += std::string("'") + FLOWMIX_BIN + "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

double printed_value(const std::string& output, const std::string& label) {
  const auto at = output.find(label + " ");
  if (at == std::string::npos) return std::nan("");
  return std::stod(output.substr(at + label.size() + 1));
}

// Small enough that a few training steps take about a second.
const char* kTinyConfig = R"({
  "synth": {
    "train": {"height": 32, "width": 32},
    "validation": {"height": 32, "width": 32},
    "unlabeled": {"height": 32, "width": 32},
    "counts": {"train": 6, "validation": 3, "unlabeled": 6}
  },
  "train": {"steps": 3, "batch_size": 2, "iterations": 2}
})";

class Cli : public ::testing::Test {
 protected:
  testutil::TempDir dir{"cli"};
  fs::path config = dir / "tiny.json";
  void SetUp() override { write(config, kTinyConfig); }
};

}  // namespace

TEST_F(Cli, TrainWritesArtifacts) {
  auto out = dir / "run";
  auto r = run_cli("train '" + config.string() + "' --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"report.jsonl", "config.resolved.json", "model.fmx", "metrics.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  // The resolved snapshot reproduces the run's configuration.
  auto snapshot = nlohmann::json::parse(slurp(out / "config.resolved.json"));
  EXPECT_EQ(snapshot["train"]["steps"], 3);
  EXPECT_EQ(snapshot["loss"]["tau"], 0.95);
}

TEST_F(Cli, TrainModeAndSeedFlags) {
  auto out = dir / "semi";
  auto r = run_cli("train '" + config.string() + "' --mode semi_supervised --seed 9 --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  auto snapshot = nlohmann::json::parse(slurp(out / "config.resolved.json"));
  EXPECT_EQ(snapshot["train"]["mode"], "semi_supervised");
  EXPECT_EQ(snapshot["train"]["seed"], 9);
  EXPECT_NE(slurp(out / "report.jsonl").find("\"coverage\""), std::string::npos);
}

TEST_F(Cli, OutputRootFromEnvironment) {
  auto r = run_cli("train '" + config.string() + "' --mode supervised_base", dir.path());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "flowmix_runs/train/report.jsonl"));
  auto root = dir / "elsewhere";
  setenv("FLOWMIX_OUTPUT_ROOT", root.string().c_str(), 1);
  auto r4 = run_cli("train '" + config.string() + "' --mode supervised_base");
  unsetenv("FLOWMIX_OUTPUT_ROOT");
  ASSERT_EQ(r4.code, 0) << r4.output;
  EXPECT_TRUE(fs::exists(root / "train/report.jsonl"));
}

TEST_F(Cli, UnknownKeyIsConfigError) {
  write(dir / "bad.json", R"({"loss": {"tua": 0.9}})");
  auto r = run_cli("train '" + (dir / "bad.json").string() + "' --out '" + (dir / "x").string() + "'");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("loss.tua"), std::string::npos) << r.output;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("train").code, 1);
  EXPECT_EQ(run_cli("train '" + config.string() + "' --mode fancy --out '" + (dir / "m").string() + "'").code, 1);
  EXPECT_EQ(run_cli("--help").code, 0);
}

TEST_F(Cli, DivergentRunExitsThreeWithFlaggedReport) {
  write(dir / "hot.json", R"({
    "synth": {"train": {"height": 32, "width": 32}, "validation": {"height": 32, "width": 32},
              "counts": {"train": 6, "validation": 3}},
    "train": {"mode": "supervised_base", "steps": 40, "batch_size": 2, "iterations": 2,
              "lr": {"max_lr": 1e9, "warmup_fraction": 0.0, "clip_norm": 1e30}}})");
  auto out = dir / "hot";
  auto r = run_cli("train '" + (dir / "hot.json").string() + "' --out '" + out.string() + "'");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(slurp(out / "report.jsonl").find("\"diverged\":true"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "model.fmx"));
}

TEST_F(Cli, EvalOracleStubOnSynthSet) {
  save_checkpoint(OracleStubModel(), dir / "stub.fmx");
  auto r = run_cli("eval '" + (dir / "stub.fmx").string() + "' '" + config.string() + "' --format synth --out '" +
                   (dir / "ps.tsv").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(printed_value(r.output, "EPE"), 0.0);
  EXPECT_NE(r.output.find("Fl-all 0%"), std::string::npos) << r.output;
  auto tsv = slurp(dir / "ps.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 4);

  save_checkpoint(OracleStubModel(3.0f, 4.0f), dir / "stub345.fmx");
  auto r2 = run_cli("eval '" + (dir / "stub345.fmx").string() + "' '" + config.string() + "' --format synth --out '" +
                    (dir / "ps2.tsv").string() + "'");
  EXPECT_NEAR(printed_value(r2.output, "EPE"), 5.0, 1e-4) << r2.output;
}

TEST_F(Cli, EvalMissingCheckpointFails) {
  auto r = run_cli("eval '" + (dir / "nope.fmx").string() + "' '" + config.string() + "' --format synth");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("nope.fmx"), std::string::npos);
}

TEST_F(Cli, EvalOnFloDatasetMatchesInMemory) {
  auto synth = run_cli("synth '" + config.string() + "' --format flo --out '" + (dir / "set").string() + "'");
  ASSERT_EQ(synth.code, 0) << synth.output;
  ToyFlowModel model(ToyModelConfig{}, 5);
  save_checkpoint(model, dir / "toy.fmx");
  auto r = run_cli("eval '" + (dir / "toy.fmx").string() + "' '" + (dir / "set/manifest.txt").string() +
                   "' --format flo --iterations 2 --out '" + (dir / "e.tsv").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  auto loaded = load_dataset(dir / "set/manifest.txt", FlowFormat::kFlo);
  auto reloaded = load_checkpoint(dir / "toy.fmx");
  auto m = evaluate(*reloaded, loaded, 2);
  EXPECT_NEAR(printed_value(r.output, "EPE"), m.epe, 1e-5 * std::max(1.0, m.epe));
}

TEST_F(Cli, EvalOnKittiDataset) {
  ASSERT_EQ(run_cli("synth '" + config.string() + "' --format kitti_png --out '" + (dir / "k").string() + "'").code,
            0);
  save_checkpoint(OracleStubModel(), dir / "stub.fmx");
  auto r = run_cli("eval '" + (dir / "stub.fmx").string() + "' '" + (dir / "k/manifest.txt").string() +
                   "' --format kitti_png --out '" + (dir / "k.tsv").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(printed_value(r.output, "EPE"), 0.0);
}

TEST_F(Cli, PreviewLambdaOneIsByteIdentical) {
  auto out = dir / "pv";
  auto r = run_cli("preview '" + config.string() + "' s1 --lambda 1 --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(out / "mixed2.png"), slurp(out / "frame2.png"));
  EXPECT_EQ(slurp(out / "mixed1.png"), slurp(out / "frame1.png"));
  EXPECT_TRUE(fs::exists(out / "distractor1.png"));
  auto info = nlohmann::json::parse(slurp(out / "lambda.json"));
  EXPECT_EQ(info["lambda2"], 1.0);
  EXPECT_TRUE(info["lambda1"].is_null());
  auto text = read_png_text(out / "gt_flow.png");
  bool has_norm = false;
  for (const auto& [k, v] : text) has_norm |= k == "flowmix:normalization";
  EXPECT_TRUE(has_norm);
}

TEST_F(Cli, PreviewBothDiffEmitsTwoDistractors) {
  auto out = dir / "pv2";
  auto r = run_cli("preview '" + config.string() + "' s0 --variant distract_both_diff --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "distractor1.png"));
  EXPECT_TRUE(fs::exists(out / "distractor2.png"));
  auto info = nlohmann::json::parse(slurp(out / "lambda.json"));
  EXPECT_EQ(info["distractors"].size(), 2u);
  EXPECT_NE(info["distractors"][0], info["distractors"][1]);
}

TEST_F(Cli, PreviewZeroFlowIsNeutral) {
  write(dir / "still.json", R"({"synth": {"train": {"height": 16, "width": 16, "max_translation": 0,
                                                     "max_rotation_deg": 0}, "counts": {"train": 3}}})");
  auto out = dir / "pv3";
  auto r = run_cli("preview '" + (dir / "still.json").string() + "' s0 --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  auto img = read_png_image(out / "gt_flow.png");
  for (float v : img.values()) EXPECT_EQ(v, 1.0f);
}

TEST_F(Cli, PreviewUnknownSampleIsConfigError) {
  EXPECT_EQ(run_cli("preview '" + config.string() + "' s99 --out '" + (dir / "p").string() + "'").code, 1);
}

TEST_F(Cli, CalibrateStub) {
  save_checkpoint(OracleStubModel(), dir / "stub.fmx");
  auto r = run_cli("calibrate '" + (dir / "stub.fmx").string() + "' '" + config.string() +
                   "' --format synth --out '" + (dir / "cal.tsv").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream in(slurp(dir / "cal.tsv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "tau\tepe\tcoverage");
  double prev_cov = 2.0;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string tau, epe, cov;
    f >> tau >> epe >> cov;
    if (rows == 0) {
      EXPECT_EQ(tau, "0");
      EXPECT_EQ(epe, "0");
      EXPECT_EQ(cov, "1");
    }
    EXPECT_LE(std::stod(cov), prev_cov);
    prev_cov = std::stod(cov);
    ++rows;
  }
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(run_cli("calibrate '" + (dir / "stub.fmx").string() + "' '" + config.string() +
                    "' --format synth --thresholds 0.9,0.2")
                .code,
            1);
}

TEST_F(Cli, AblateIsolatesDivergentCellAndIsDeterministic) {
  write(dir / "grid.json", R"({
    "base": {
      "synth": {"train": {"height": 32, "width": 32}, "validation": {"height": 32, "width": 32},
                "counts": {"train": 6, "validation": 3}},
      "train": {"mode": "supervised_base", "steps": 2, "batch_size": 2, "iterations": 2}},
    "seeds": [0, 1],
    "cells": [
      {"name": "plain"},
      {"name": "hot", "overrides": {"train": {"steps": 40,
          "lr": {"max_lr": 1e9, "warmup_fraction": 0.0, "clip_norm": 1e30}}}}
    ]})");
  auto a = run_cli("ablate '" + (dir / "grid.json").string() + "' --out '" + (dir / "a").string() + "'");
  ASSERT_EQ(a.code, 0) << a.output;
  auto b = run_cli("ablate '" + (dir / "grid.json").string() + "' --out '" + (dir / "b").string() + "'");
  ASSERT_EQ(b.code, 0) << b.output;
  const auto table = slurp(dir / "a/ablation.tsv");
  EXPECT_EQ(table, slurp(dir / "b/ablation.tsv"));
  EXPECT_TRUE(fs::exists(dir / "a/hot.config.json"));
  std::istringstream in(table);
  std::string line;
  int plain_rows = 0, hot_diverged = 0;
  while (std::getline(in, line)) {
    if (line.rfind("plain\t", 0) == 0 && line.find("\tnan\t") == std::string::npos) ++plain_rows;
    if (line.rfind("hot\t", 0) == 0) {
      std::istringstream f(line);
      std::string cell, seed, epe, fl, div;
      f >> cell >> seed >> epe >> fl >> div;
      if (div == "1") ++hot_diverged;
    }
  }
  EXPECT_EQ(plain_rows, 3);  // two seed rows and the summary row
  EXPECT_EQ(hot_diverged, 2);
}

TEST_F(Cli, SingleCellAblation) {
  write(dir / "one.json", R"({
    "base": {"synth": {"train": {"height": 32, "width": 32}, "validation": {"height": 32, "width": 32},
                       "counts": {"train": 4, "validation": 2}},
             "train": {"mode": "supervised_base", "steps": 1, "batch_size": 2, "iterations": 1}},
    "seeds": [3], "cells": [{"name": "only"}]})");
  auto r = run_cli("ablate '" + (dir / "one.json").string() + "' --out '" + (dir / "one").string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  auto table = slurp(dir / "one/ablation.tsv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 1 + 1 + 1 + 1 + 1);  // header, row, blank, header, summary
}
