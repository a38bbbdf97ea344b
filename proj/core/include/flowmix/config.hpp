#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowmix/data.hpp"
#include "flowmix/model.hpp"
#include "flowmix/trainer.hpp"

namespace flowmix {

inline constexpr int kSchemaVersion = 1;

struct DatasetCounts {
  int train = 256;
  int validation = 64;
  int unlabeled = 256;
};

struct SynthSection {
  SynthConfig train;
  SynthConfig validation;
  SynthConfig unlabeled;
  DatasetCounts counts;

  SynthSection();
};

/// Everything a run needs. `train.augment` and `train.loss` are read from the
/// top-level "augment" and "loss" sections of the file.
struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  SynthSection synth;
  TrainConfig train;
  ToyModelConfig model;
  std::optional<std::string> init_checkpoint;

  ExperimentConfig();
};

/// Largest displacement (full-resolution pixels) the model's correlation lookup can see.
double correlation_range(const ToyModelConfig& model);

/// Strict parse: unknown keys and ill-typed values throw ConfigError naming the key
/// path; missing keys keep their defaults.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Fully resolved config as pretty-printed JSON; parses back to an equal config.
std::string to_json(const ExperimentConfig& config);

struct AblationGrid {
  ExperimentConfig base;
  std::vector<std::uint64_t> seeds;
  struct Cell {
    std::string name;
    ExperimentConfig config;
  };
  std::vector<Cell> cells;
};

/// {"schema_version", "base": {...}, "seeds": [...], "cells": [{"name", "overrides": {...}}]}.
/// Overrides are merged into the base document before the strict parse.
AblationGrid parse_ablation_grid(std::string_view text);
AblationGrid load_ablation_grid(const std::filesystem::path& path);

}  // namespace flowmix
