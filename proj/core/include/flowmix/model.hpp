#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flowmix/data.hpp"
#include "flowmix/losses.hpp"
#include "flowmix/types.hpp"

namespace flowmix {

inline constexpr int kDefaultIterations = 4;

/// Anything that maps a frame pair to a sequence of forward-flow estimates.
class FlowModel {
 public:
  virtual ~FlowModel() = default;

  virtual std::string_view kind() const noexcept = 0;

  /// frame1, frame2: [B, 3, H, W] in [0, 1]. Returns `iterations` estimates of
  /// [B, 2, H, W] forward flow, last = final.
  virtual PredictionSequence forward(const torch::Tensor& frame1, const torch::Tensor& frame2, int iterations) = 0;

  /// Trainable tensors by name; empty for models without parameters.
  virtual std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const { return {}; }
  std::vector<torch::Tensor> parameters() const;
  std::int64_t parameter_count() const;

  /// Architecture settings written into checkpoints, as a JSON object.
  virtual std::string metadata_json() const { return "{}"; }

  virtual void set_training(bool on) { (void)on; }

  /// Evaluation-mode prediction for a single pair, without gradient tracking.
  PredictionSequence predict(const Image& frame1, const Image& frame2, int iterations = kDefaultIterations);
};

struct ToyModelConfig {
  int feature_dim = 32;
  int hidden_dim = 24;
  int context_dim = 16;
  int corr_levels = 2;
  int corr_radius = 2;

  void validate() const;
};

/// Small recurrent all-pairs-correlation estimator working at 1/4 resolution.
class ToyFlowModel : public FlowModel {
 public:
  explicit ToyFlowModel(ToyModelConfig config = {}, std::uint64_t seed = 0);
  ~ToyFlowModel() override;

  std::string_view kind() const noexcept override { return "toy_flow"; }
  PredictionSequence forward(const torch::Tensor& frame1, const torch::Tensor& frame2, int iterations) override;
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const override;
  std::string metadata_json() const override;
  void set_training(bool on) override;

  const ToyModelConfig& config() const noexcept { return config_; }

  /// Copies every parameter value from `other` (same architecture required).
  void copy_parameters_from(const ToyFlowModel& other);

 private:
  struct Net;
  ToyModelConfig config_;
  std::shared_ptr<Net> net_;
};

/// Test model: looks a pair up by content and answers ground truth plus a fixed
/// offset. Pairs it does not know (including swapped pairs) get zero flow.
class OracleStubModel : public FlowModel {
 public:
  explicit OracleStubModel(float offset_u = 0.0f, float offset_v = 0.0f);

  std::string_view kind() const noexcept override { return "oracle_stub"; }
  PredictionSequence forward(const torch::Tensor& frame1, const torch::Tensor& frame2, int iterations) override;
  std::string metadata_json() const override;

  void bind(const std::vector<LabeledSample>& dataset);
  float offset_u() const noexcept { return offset_u_; }
  float offset_v() const noexcept { return offset_v_; }

 private:
  float offset_u_;
  float offset_v_;
  std::unordered_map<std::uint64_t, FlowField> table_;
};

/// Content hash of one [3, H, W] frame pair, shared by OracleStubModel lookups.
std::uint64_t pair_hash(const torch::Tensor& frame1, const torch::Tensor& frame2);

struct BidirectionalPrediction {
  PredictionSequence forward;
  PredictionSequence backward;
};

/// forward = model(frame1, frame2); backward = model(frame2, frame1).
BidirectionalPrediction predict_bidirectional(FlowModel& model, const torch::Tensor& frame1,
                                              const torch::Tensor& frame2, int iterations);
BidirectionalPrediction predict_bidirectional(FlowModel& model, const Image& frame1, const Image& frame2,
                                              int iterations = kDefaultIterations);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container: magic "FMXCKPT\0", u32 version, kind, JSON metadata, named f32 tensors.
void save_checkpoint(const FlowModel& model, const std::filesystem::path& path);
/// Throws CheckpointError on a missing, truncated or incompatible file.
std::unique_ptr<FlowModel> load_checkpoint(const std::filesystem::path& path);

}  // namespace flowmix
