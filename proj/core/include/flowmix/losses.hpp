#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>
#include <vector>

#include "flowmix/flowcore.hpp"
#include "flowmix/types.hpp"

namespace flowmix {

/// Flow predictions of an iterative model, one [B, 2, H, W] tensor per refinement
/// step; the last entry is the final estimate.
struct PredictionSequence {
  std::vector<torch::Tensor> flows;
  FlowDirection direction = FlowDirection::kForward;

  const torch::Tensor& final() const { return flows.back(); }
  std::size_t size() const noexcept { return flows.size(); }
};

enum class DistractionWeightMode {
  kLambda,    // w_dist = the sample's own mixing ratio
  kConstant,  // w_dist = LossConfig::w_dist_constant
};

std::string_view to_string(DistractionWeightMode mode) noexcept;
DistractionWeightMode parse_weight_mode(std::string_view name);

struct LossConfig {
  DistractionWeightMode w_dist_mode = DistractionWeightMode::kLambda;
  double w_dist_constant = 1.0;
  double w_self = 1.0;
  double tau = 0.95;
  double gamma1 = kDefaultGamma1;
  double gamma2 = kDefaultGamma2;
  /// Weight of iteration i of N is seq_decay^(N - i).
  double seq_decay = 0.8;

  void validate() const;
  ConfidenceOptions confidence() const { return {gamma1, gamma2, false}; }
};

/// Per-sample sequence L1 loss, shape [B]:
///   sum_i decay^(N-i) * mean_{valid pixels} |pred_i - target|_1
/// `valid` is a [B, H, W] 0/1 tensor. Samples without a single valid pixel are
/// rejected unless `allow_empty` is set, in which case they contribute exactly zero.
torch::Tensor sequence_l1_per_sample(const PredictionSequence& preds, const torch::Tensor& target,
                                     const torch::Tensor& valid, double seq_decay, bool allow_empty = false);

/// Batch mean of sequence_l1_per_sample.
torch::Tensor sequence_l1(const PredictionSequence& preds, const torch::Tensor& target, const torch::Tensor& valid,
                          double seq_decay);

/// Supervision of the distracted pair by the original pair's ground truth (per sample).
torch::Tensor loss_dist_per_sample(const PredictionSequence& preds_on_distracted, const torch::Tensor& gt,
                                   const torch::Tensor& valid, double seq_decay);
torch::Tensor loss_dist(const PredictionSequence& preds_on_distracted, const torch::Tensor& gt,
                        const torch::Tensor& valid, double seq_decay);

/// Per-sample distraction weights w_dist, shape [B], resolved from the config and the
/// sampled ratios.
torch::Tensor distraction_weights(const std::vector<double>& lambdas, const LossConfig& cfg);

/// mean_b( L_base[b] + w_dist[b] * L_dist[b] ). `w_dist` is [B].
torch::Tensor loss_sup(const PredictionSequence& base_preds, const PredictionSequence& dist_preds,
                       const torch::Tensor& gt, const torch::Tensor& valid, const torch::Tensor& w_dist,
                       double seq_decay);
/// Single-ratio convenience form.
torch::Tensor loss_sup(const PredictionSequence& base_preds, const PredictionSequence& dist_preds,
                       const torch::Tensor& gt, const torch::Tensor& valid, double lambda, const LossConfig& cfg);

/// Confidence-gated consistency between the distracted-pair predictions and the
/// (detached) pseudo label. Each sample averages over its selected pixels only; a
/// sample with an all-false mask contributes exactly zero. Returns the batch mean.
torch::Tensor loss_self(const PredictionSequence& preds_on_distracted, const torch::Tensor& pseudo,
                        const torch::Tensor& conf_mask, double seq_decay);

/// sup + w_self * self. Throws TrainingInstability if either part is non-finite.
torch::Tensor loss_total(const torch::Tensor& sup, const torch::Tensor& self, double w_self);

}  // namespace flowmix
