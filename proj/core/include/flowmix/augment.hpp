#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "flowmix/types.hpp"

namespace flowmix {

using Rng = std::mt19937_64;

/// Convex-combination weight of the original frame against a distractor.
class MixingRatio {
 public:
  /// Accepts the closed interval [0, 1]; sampled ratios are always strictly inside it.
  explicit MixingRatio(double value);

  double value() const noexcept { return value_; }
  friend bool operator==(const MixingRatio&, const MixingRatio&) = default;

 private:
  double value_;
};

/// Sampled ratios are kept inside [kLambdaMargin, 1 - kLambdaMargin].
inline constexpr double kLambdaMargin = 1e-4;

/// Draws lambda ~ Beta(alpha, alpha).
MixingRatio sample_lambda(double alpha, Rng& rng);

/// lambda * base + (1 - lambda) * distractor.
Image mix(const Image& base, const Image& distractor, MixingRatio lambda);

enum class AugmentVariant {
  kDistractSecond,
  kDistractFirst,
  kDistractBothSame,
  kDistractBothDiff,
  kGaussianNoise,
  kRandomShapes,
  kNone,
};

std::string_view to_string(AugmentVariant variant) noexcept;
/// Throws ContractViolation for unknown names.
AugmentVariant parse_augment_variant(std::string_view name);

struct ShapeCountRange {
  int min = 5;
  int max = 10;
};

struct AugmentConfig {
  AugmentVariant variant = AugmentVariant::kDistractSecond;
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double noise_sigma = 0.1;
  ShapeCountRange shape_count{};
  /// Test hook: use this ratio instead of sampling one.
  std::optional<double> forced_lambda;

  void validate() const;
};

/// Identifies one frame of one dataset sample.
struct FrameRef {
  std::string sample_id;
  int frame_index = 0;

  friend bool operator==(const FrameRef&, const FrameRef&) = default;
};

/// Read-only set of frames distractors are drawn from. Safe for concurrent reads.
class FramePool {
 public:
  FramePool() = default;

  void add(std::string sample_id, int frame_index, std::shared_ptr<const Image> frame);

  std::size_t size() const noexcept { return entries_.size(); }
  const FrameRef& ref(std::size_t i) const { return entries_.at(i).ref; }
  const Image& frame(std::size_t i) const { return *entries_.at(i).image; }

 private:
  struct Entry {
    FrameRef ref;
    std::shared_ptr<const Image> image;
  };
  std::vector<Entry> entries_;
};

struct Distractor {
  Image image;
  FrameRef source;
};

/// Random-resized crop of `source` to height x width (crop side fraction in [0.6, 1]).
Image random_resized_crop(const Image& source, int height, int width, Rng& rng);

/// Uniform draw over pool frames whose sample id differs from `exclude_sample`,
/// adapted to the target shape by random-resized crop.
Distractor sample_distractor(const FramePool& pool, std::string_view exclude_sample, int height, int width,
                             Rng& rng);

struct DistractedPair {
  Image frame1;
  Image frame2;
  std::optional<MixingRatio> lambda1;
  std::optional<MixingRatio> lambda2;
  AugmentVariant variant = AugmentVariant::kNone;
  std::vector<FrameRef> distractor_ids;
  /// The cropped distractor images, in the same order as `distractor_ids`.
  std::vector<Image> distractors;
};

/// Builds the perturbed pair for one sample. `sample_id` is excluded from distractor draws.
DistractedPair make_distracted_pair(const Image& frame1, const Image& frame2, const AugmentConfig& config,
                                    const FramePool& pool, std::string_view sample_id, Rng& rng);

/// img + N(0, sigma^2), clipped to [0, 1].
Image gaussian_perturb(const Image& img, double sigma, Rng& rng);

struct ShapesImage {
  Image image;
  int shape_count = 0;
};

/// Random solid background with `range.min`..`range.max` random circles, triangles and rectangles.
ShapesImage synthesize_shapes(int height, int width, ShapeCountRange range, Rng& rng);

/// mix(img, shapes, lambda) with a freshly synthesized shapes image.
Image random_shapes_perturb(const Image& img, MixingRatio lambda, Rng& rng, ShapeCountRange range = {});

}  // namespace flowmix
