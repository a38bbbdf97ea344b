#include <gtest/gtest.h>

#include <fstream>

#include "flowmix/config.hpp"
#include "flowmix/errors.hpp"
#include "test_util.hpp"

using namespace flowmix;

namespace {

std::string config_error(std::string_view text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ExperimentConfig, EmptyDocumentGivesDefaults) {
  auto cfg = parse_experiment_config("{}");
  EXPECT_EQ(cfg.schema_version, 1);
  EXPECT_EQ(cfg.train.loss.tau, 0.95);
  EXPECT_EQ(cfg.train.loss.gamma1, 0.01);
  EXPECT_EQ(cfg.train.loss.gamma2, 0.5);
  EXPECT_EQ(cfg.train.loss.w_self, 1.0);
  EXPECT_EQ(cfg.train.loss.w_dist_mode, DistractionWeightMode::kLambda);
  EXPECT_EQ(cfg.train.augment.alpha2, 1.0);
  EXPECT_EQ(cfg.train.augment.variant, AugmentVariant::kDistractSecond);
  EXPECT_EQ(cfg.train.mode, TrainMode::kSupervisedDistract);
  EXPECT_FALSE(cfg.init_checkpoint);
  EXPECT_LE(cfg.synth.validation.max_translation, correlation_range(cfg.model));
}

TEST(ExperimentConfig, PartialOverride) {
  auto cfg = parse_experiment_config(R"({"loss": {"tau": 0.5}, "train": {"steps": 7, "lr": {"max_lr": 0.01}},
                                         "augment": {"variant": "random_shapes", "forced_lambda": 0.3}})");
  EXPECT_EQ(cfg.train.loss.tau, 0.5);
  EXPECT_EQ(cfg.train.loss.gamma2, 0.5);
  EXPECT_EQ(cfg.train.steps, 7);
  EXPECT_EQ(cfg.train.lr.max_lr, 0.01);
  EXPECT_EQ(cfg.train.augment.variant, AugmentVariant::kRandomShapes);
  EXPECT_EQ(cfg.train.augment.forced_lambda, 0.3);
}

TEST(ExperimentConfig, UnknownKeysNamed) {
  EXPECT_EQ(config_error(R"({"bogus": 1})"), "unknown key 'bogus'");
  EXPECT_EQ(config_error(R"({"loss": {"taux": 0.5}})"), "unknown key 'loss.taux'");
  EXPECT_EQ(config_error(R"({"synth": {"train": {"effects": {"fog": 1}}}})"),
            "unknown key 'synth.train.effects.fog'");
  EXPECT_EQ(config_error(R"({"train": {"lr": {"warmup": 0.1}}})"), "unknown key 'train.lr.warmup'");
}

TEST(ExperimentConfig, IllTypedValuesNamed) {
  EXPECT_EQ(config_error(R"({"loss": {"tau": "high"}})"), "loss.tau: expected a number");
  EXPECT_EQ(config_error(R"({"train": {"steps": 1.5}})"), "train.steps: expected an integer");
  EXPECT_EQ(config_error(R"({"train": {"seed": -1}})"), "train.seed: expected an integer");
  EXPECT_EQ(config_error(R"({"augment": {"variant": "cutmix"}})"), "augment.variant: unknown value 'cutmix'");
  EXPECT_EQ(config_error(R"({"loss": 3})"), "loss: expected an object");
}

TEST(ExperimentConfig, SemanticErrorsCarryPath) {
  EXPECT_EQ(config_error(R"({"loss": {"tau": 1.5}})").rfind("loss:", 0), 0u);
  EXPECT_EQ(config_error(R"({"augment": {"alpha2": 0}})").rfind("augment:", 0), 0u);
  EXPECT_EQ(config_error(R"({"train": {"batch_size": 0}})").rfind("train:", 0), 0u);
  EXPECT_EQ(config_error(R"({"synth": {"train": {"max_translation": 100}}})").rfind("synth.train", 0), 0u);
  EXPECT_EQ(config_error(R"({"schema_version": 2})").rfind("schema_version", 0), 0u);
  EXPECT_NE(config_error("{not json").find("not valid JSON"), std::string::npos);
}

TEST(ExperimentConfig, ResolvedJsonRoundTrips) {
  auto cfg = parse_experiment_config(R"({"loss": {"w_dist_mode": "constant", "w_dist_constant": 0.25},
                                         "train": {"mode": "semi_supervised", "coverage_probe_taus": [0.37, 0.7]},
                                         "init_checkpoint": "x.fmx",
                                         "synth": {"counts": {"train": 12}}})");
  const auto text = to_json(cfg);
  auto back = parse_experiment_config(text);
  EXPECT_EQ(to_json(back), text);
  EXPECT_EQ(back.train.mode, TrainMode::kSemiSupervised);
  EXPECT_EQ(back.train.coverage_probe_taus, (std::vector<double>{0.37, 0.7}));
  EXPECT_EQ(back.init_checkpoint, "x.fmx");
  EXPECT_EQ(back.synth.counts.train, 12);
  EXPECT_EQ(back.train.loss.w_dist_constant, 0.25);
}

TEST(ExperimentConfig, LoadFromFile) {
  testutil::TempDir dir("cfg");
  std::ofstream(dir / "c.json") << R"({"train": {"steps": 3}})";
  EXPECT_EQ(load_experiment_config(dir / "c.json").train.steps, 3);
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), ConfigError);
}

TEST(AblationGrid, OverridesMergeIntoBase) {
  auto grid = parse_ablation_grid(R"({
    "base": {"train": {"steps": 5, "mode": "supervised_distract"}},
    "seeds": [0, 1, 2],
    "cells": [
      {"name": "realistic"},
      {"name": "noise", "overrides": {"augment": {"variant": "gaussian_noise"}}},
      {"name": "base", "overrides": {"train": {"mode": "supervised_base"}}}
    ]})");
  EXPECT_EQ(grid.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  ASSERT_EQ(grid.cells.size(), 3u);
  EXPECT_EQ(grid.cells[0].config.train.augment.variant, AugmentVariant::kDistractSecond);
  EXPECT_EQ(grid.cells[1].config.train.augment.variant, AugmentVariant::kGaussianNoise);
  EXPECT_EQ(grid.cells[1].config.train.steps, 5);
  EXPECT_EQ(grid.cells[2].config.train.mode, TrainMode::kSupervisedBase);
  EXPECT_EQ(grid.cells[2].config.train.steps, 5);
}

TEST(AblationGrid, Errors) {
  auto err = [](std::string_view text) {
    try {
      parse_ablation_grid(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(err(R"({"seeds": [0], "cells": []})"), "cells: expected a non-empty list");
  EXPECT_EQ(err(R"({"seeds": [], "cells": [{"name": "a"}]})"), "seeds: at least one seed is required");
  EXPECT_EQ(err(R"({"seeds": [0], "cells": [{"name": "a"}, {"name": "a"}]})"), "cells[1].name: duplicate cell 'a'");
  EXPECT_EQ(err(R"({"seeds": [0], "cells": [{"name": "a", "overrides": {"loss": {"tua": 1}}}]})"),
            "cells[0].overrides: unknown key 'loss.tua'");
  EXPECT_EQ(err(R"({"seeds": [0], "cells": [{"name": "a", "extra": 1}]})"), "unknown key 'cells[0].extra'");
  EXPECT_EQ(err(R"({"seeds": [0], "cells": [{"name": "a"}], "other": 1})"), "unknown key 'other'");
}
