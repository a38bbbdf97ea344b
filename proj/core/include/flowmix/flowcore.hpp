#pragma once

#include <optional>
#include <vector>

#include "flowmix/types.hpp"

namespace flowmix {

inline constexpr double kDefaultGamma1 = 0.01;
inline constexpr double kDefaultGamma2 = 0.5;

struct SampledField {
  VectorGrid values;
  /// True where the requested position fell outside [0, W-1] x [0, H-1] and was clamped.
  BoolGrid out_of_bounds;
};

/// Bilinear interpolation of `field` at absolute positions `coords` (channel 0 = x, 1 = y).
/// Positions outside the image are clamped to the border before interpolating.
SampledField bilinear_sample(const VectorGrid& field, const VectorGrid& coords);

/// Everything the forward-backward check produces for one pixel grid.
struct ForwardBackwardCheck {
  ScalarGrid residual;       // |vf(x) + vb(x + vf(x))|^2
  VectorGrid warped_backward;  // vb(x + vf(x))
  BoolGrid out_of_bounds;    // x + vf(x) left the frame
};

ForwardBackwardCheck forward_backward_check(const FlowField& forward, const FlowField& backward);

ScalarGrid fb_residual(const FlowField& forward, const FlowField& backward);

struct ConfidenceOptions {
  double gamma1 = kDefaultGamma1;
  double gamma2 = kDefaultGamma2;
  /// Force confidence to its floor where the forward flow leaves the frame.
  bool zero_out_of_bounds = false;
};

/// exp(-residual / (gamma1 * (|vf|^2 + |vb(x + vf)|^2) + gamma2)).
ConfidenceMap confidence_map(const FlowField& forward, const FlowField& backward,
                             const ConfidenceOptions& options = {});

/// Pixel-wise [conf >= tau].
ValidMask consistency_mask(const ConfidenceMap& confidence, double tau);

double epe(const FlowField& pred, const FlowField& gt, const ValidMask& valid);

enum class OutlierRule {
  kAnd,  // error > 3 px and > 5% of |gt| (KITTI devkit)
  kOr,   // error > 3 px or > 5% of |gt|
};

inline constexpr double kOutlierAbsolutePx = 3.0;
inline constexpr double kOutlierRelative = 0.05;

/// Percentage of valid pixels that are outliers.
double fl_all(const FlowField& pred, const FlowField& gt, const ValidMask& valid,
              OutlierRule rule = OutlierRule::kAnd);

/// Pixel-level sums behind EPE / Fl-all so several samples can be pooled.
struct ErrorTally {
  double epe_sum = 0.0;
  std::size_t outliers = 0;
  std::size_t pixels = 0;

  ErrorTally& operator+=(const ErrorTally& other) noexcept;
  double mean_epe() const;
  double outlier_percent() const;
};

ErrorTally tally_errors(const FlowField& pred, const FlowField& gt, const ValidMask& valid,
                        const std::optional<ValidMask>& selection = std::nullopt,
                        OutlierRule rule = OutlierRule::kAnd);

struct CalibrationPoint {
  double tau = 0.0;
  /// Empty when no pixel passes the threshold.
  std::optional<double> epe;
  double coverage = 0.0;
  std::size_t selected = 0;
  std::size_t valid = 0;
};

/// EPE restricted to confident pixels and the fraction of valid pixels kept, per threshold.
std::vector<CalibrationPoint> calibration_curve(const FlowField& pred_forward, const FlowField& pred_backward,
                                                const FlowField& gt, const ValidMask& valid,
                                                const std::vector<double>& thresholds,
                                                const ConfidenceOptions& options = {});

/// Pools calibration statistics over a dataset (pixel-weighted).
class CalibrationAccumulator {
 public:
  explicit CalibrationAccumulator(std::vector<double> thresholds);

  void add(const FlowField& pred_forward, const FlowField& pred_backward, const FlowField& gt, const ValidMask& valid,
           const ConfidenceOptions& options = {});

  std::vector<CalibrationPoint> result() const;
  const std::vector<double>& thresholds() const noexcept { return thresholds_; }

 private:
  std::vector<double> thresholds_;
  std::vector<double> epe_sums_;
  std::vector<std::size_t> selected_;
  std::size_t valid_ = 0;
};

}  // namespace flowmix
