#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowmix/augment.hpp"
#include "flowmix/data.hpp"
#include "flowmix/flowcore.hpp"
#include "flowmix/losses.hpp"
#include "flowmix/model.hpp"

namespace flowmix {

enum class TrainMode { kSupervisedBase, kSupervisedDistract, kSemiSupervised };

std::string_view to_string(TrainMode mode) noexcept;
TrainMode parse_train_mode(std::string_view name);

/// One-cycle schedule: linear warm-up from max_lr / 25 over the first
/// `warmup_fraction` of the run, then linear decay towards zero.
struct LrSchedule {
  double max_lr = 4e-4;
  double warmup_fraction = 0.05;
  double weight_decay = 1e-4;
  double epsilon = 1e-8;
  double clip_norm = 1.0;

  double at(int step, int total_steps) const;
};

struct DivergenceRule {
  double factor = 1e3;
  int window = 100;
  /// The ratio test only starts once this many losses are on record.
  int min_history = 10;
};

struct TrainConfig {
  TrainMode mode = TrainMode::kSupervisedBase;
  int steps = 1500;
  int batch_size = 4;
  int iterations = kDefaultIterations;
  std::uint64_t seed = 0;
  LrSchedule lr{};
  AugmentConfig augment{};
  LossConfig loss{};
  DivergenceRule divergence{};
  /// 0 disables periodic evaluation / checkpoints.
  int eval_every = 0;
  int checkpoint_every = 0;
  /// Extra thresholds whose mask coverage is logged next to the training tau.
  std::vector<double> coverage_probe_taus;

  void validate() const;
};

struct Metrics {
  double epe = 0.0;       // mean over samples of per-sample EPE
  double fl_all = 0.0;    // pooled over all valid pixels, in percent
  std::size_t samples = 0;
  std::size_t pixels = 0;
  std::vector<double> per_sample_epe;
  std::vector<double> per_sample_fl_all;
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss_base = 0.0;
  double loss_dist = 0.0;
  double loss_self = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
  /// Per-sample w_dist actually applied (empty in supervised_base mode).
  std::vector<double> w_dist;
  /// Fraction of unlabeled pixels passing the gate (semi-supervised only).
  std::optional<double> coverage;
  std::vector<double> probe_coverage;
};

struct EvalRecord {
  int step = 0;
  double epe = 0.0;
  double fl_all = 0.0;
};

struct TrainReport {
  TrainMode mode = TrainMode::kSupervisedBase;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  bool diverged = false;
  std::optional<int> diverged_at;
  std::string divergence_reason;
  double wall_seconds = 0.0;

  /// One JSON object per line: steps, evals, then a summary record.
  void write_jsonl(const std::filesystem::path& path) const;
};

struct TrainData {
  const std::vector<LabeledSample>* labeled = nullptr;
  const std::vector<UnlabeledSample>* unlabeled = nullptr;
  /// Used for periodic evaluation when eval_every > 0.
  const std::vector<LabeledSample>* validation = nullptr;
  /// Where periodic checkpoints and the report go; empty = keep in memory.
  std::filesystem::path out_dir;
};

/// Trains `model` in place according to cfg.mode. Divergence halts training,
/// restores the last parameters that produced a finite, in-range loss and is
/// reported through the returned flag; it never throws.
TrainReport train(FlowModel& model, const TrainConfig& cfg, const TrainData& data);

struct TrainOutcome {
  std::unique_ptr<ToyFlowModel> model;
  TrainReport report;
};

/// Fresh ToyFlowModel (or a copy of `init`) trained with mode supervised_base or supervised_distract.
TrainOutcome train_supervised(const TrainConfig& cfg, const TrainData& data, const ToyModelConfig& arch = {},
                              const ToyFlowModel* init = nullptr);
/// Semi-supervised finetuning starting from a copy of `init` (fresh weights if null).
TrainOutcome train_semi(const TrainConfig& cfg, const TrainData& data, const ToyFlowModel* init,
                        const ToyModelConfig& arch = {});

/// w_dist for one distracted pair: its ratio for single-frame variants, the product
/// for both-frame variants, 0.5 for gaussian noise, 0 when nothing was distracted
/// (a forced ratio overrides the last two).
double pair_weight(const DistractedPair& pair, const AugmentConfig& augment);

/// Final-iteration EPE and Fl-all over a labeled dataset, in evaluation mode.
Metrics evaluate(FlowModel& model, const std::vector<LabeledSample>& dataset, int iterations = kDefaultIterations,
                 OutlierRule rule = OutlierRule::kAnd, int batch_size = 8);

/// Pooled calibration curve of the model's forward-backward confidence over a dataset.
std::vector<CalibrationPoint> calibrate(FlowModel& model, const std::vector<LabeledSample>& dataset,
                                        const std::vector<double>& thresholds,
                                        int iterations = kDefaultIterations, const ConfidenceOptions& options = {},
                                        int batch_size = 8);

struct AblationCell {
  std::string name;
  TrainConfig config;
  /// Starting weights per seed (semi-supervised cells); null = fresh model.
  std::function<std::unique_ptr<ToyFlowModel>(std::uint64_t seed)> init;
};

struct AblationRow {
  std::string cell;
  std::uint64_t seed = 0;
  std::optional<Metrics> metrics;
  bool diverged = false;
  std::string error;
};

struct AblationSummary {
  std::string cell;
  std::optional<double> median_epe;
  std::optional<double> median_fl_all;
  int runs = 0;
  int diverged = 0;
  int failed = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summaries;

  const AblationSummary& summary(std::string_view cell) const;
  /// Tab-separated rows followed by per-cell medians.
  void write_tsv(const std::filesystem::path& path) const;
};

/// Runs every cell under every seed; a failing or diverging run is recorded and the
/// sweep continues. Divergent runs are excluded from the medians.
AblationTable run_ablation(const std::vector<AblationCell>& cells, const std::vector<std::uint64_t>& seeds,
                           const TrainData& data, const std::vector<LabeledSample>& validation,
                           const ToyModelConfig& arch = {},
                           const std::function<void(const AblationRow&)>& on_row = {});

double median(std::vector<double> values);

}  // namespace flowmix
