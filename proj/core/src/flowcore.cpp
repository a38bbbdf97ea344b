#include "flowmix/flowcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flowmix {

namespace {

// Smallest value a confidence may take; exp() of a very negative argument
// underflows to zero otherwise, and the map is defined on (0, 1].
constexpr float kConfidenceFloor = std::numeric_limits<float>::min();

void require_direction(const FlowField& field, FlowDirection expected, const char* what) {
  if (field.direction() != expected) {
    throw ContractViolation(std::string(what) + " must be tagged " + std::string(to_string(expected)) + ", got " +
                            std::string(to_string(field.direction())));
  }
}

void require_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ContractViolation("confidence threshold must lie in [0, 1], got " + std::to_string(tau));
  }
}

void require_thresholds(const std::vector<double>& thresholds) {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    require_tau(thresholds[i]);
    if (i > 0 && thresholds[i] < thresholds[i - 1]) {
      throw ContractViolation("calibration thresholds must be sorted ascending");
    }
  }
}

bool is_outlier(double error, double gt_magnitude, OutlierRule rule) noexcept {
  const bool absolute = error > kOutlierAbsolutePx;
  const bool relative = error > kOutlierRelative * gt_magnitude;
  return rule == OutlierRule::kAnd ? (absolute && relative) : (absolute || relative);
}

}  // namespace

SampledField bilinear_sample(const VectorGrid& field, const VectorGrid& coords) {
  require_same_shape(field, coords, "bilinear_sample");
  const int h = field.height();
  const int w = field.width();
  SampledField out{VectorGrid(h, w), BoolGrid(h, w, 0)};

  const auto max_x = static_cast<float>(w - 1);
  const auto max_y = static_cast<float>(h - 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const float px = coords(r, c, 0);
      const float py = coords(r, c, 1);
      if (!std::isfinite(px) || !std::isfinite(py)) {
        throw ContractViolation("bilinear_sample: non-finite sampling position");
      }
      const float x = std::clamp(px, 0.0f, max_x);
      const float y = std::clamp(py, 0.0f, max_y);
      out.out_of_bounds(r, c) = (x != px || y != py) ? 1 : 0;

      const int x0 = static_cast<int>(std::floor(x));
      const int y0 = static_cast<int>(std::floor(y));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const float fx = x - static_cast<float>(x0);
      const float fy = y - static_cast<float>(y0);
      for (int ch = 0; ch < 2; ++ch) {
        const float top = (1.0f - fx) * field(y0, x0, ch) + fx * field(y0, x1, ch);
        const float bottom = (1.0f - fx) * field(y1, x0, ch) + fx * field(y1, x1, ch);
        out.values(r, c, ch) = (1.0f - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

ForwardBackwardCheck forward_backward_check(const FlowField& forward, const FlowField& backward) {
  require_same_shape(forward, backward, "forward_backward_check");
  require_direction(forward, FlowDirection::kForward, "first flow");
  require_direction(backward, FlowDirection::kBackward, "second flow");

  const int h = forward.height();
  const int w = forward.width();
  VectorGrid coords(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      coords(r, c, 0) = static_cast<float>(c) + forward.u(r, c);
      coords(r, c, 1) = static_cast<float>(r) + forward.v(r, c);
    }
  }
  auto sampled = bilinear_sample(backward, coords);

  ScalarGrid residual(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double du = static_cast<double>(forward.u(r, c)) + sampled.values(r, c, 0);
      const double dv = static_cast<double>(forward.v(r, c)) + sampled.values(r, c, 1);
      residual(r, c) = static_cast<float>(du * du + dv * dv);
    }
  }
  return {std::move(residual), std::move(sampled.values), std::move(sampled.out_of_bounds)};
}

ScalarGrid fb_residual(const FlowField& forward, const FlowField& backward) {
  return forward_backward_check(forward, backward).residual;
}

ConfidenceMap confidence_map(const FlowField& forward, const FlowField& backward, const ConfidenceOptions& options) {
  if (!(options.gamma1 >= 0.0)) {
    throw ContractViolation("gamma1 must be non-negative");
  }
  if (!(options.gamma2 > 0.0)) {
    throw ContractViolation("gamma2 must be positive");
  }
  const auto check = forward_backward_check(forward, backward);
  const int h = forward.height();
  const int w = forward.width();
  ConfidenceMap conf(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (options.zero_out_of_bounds && check.out_of_bounds(r, c)) {
        conf(r, c) = kConfidenceFloor;
        continue;
      }
      const double fu = forward.u(r, c);
      const double fv = forward.v(r, c);
      const double bu = check.warped_backward(r, c, 0);
      const double bv = check.warped_backward(r, c, 1);
      const double denom = options.gamma1 * (fu * fu + fv * fv + bu * bu + bv * bv) + options.gamma2;
      const double value = std::exp(-static_cast<double>(check.residual(r, c)) / denom);
      conf(r, c) = std::max(static_cast<float>(value), kConfidenceFloor);
    }
  }
  return conf;
}

ValidMask consistency_mask(const ConfidenceMap& confidence, double tau) {
  require_tau(tau);
  ValidMask mask(confidence.height(), confidence.width(), false);
  auto in = confidence.values();
  auto out = mask.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = static_cast<double>(in[i]) >= tau ? 1 : 0;
  }
  return mask;
}

ErrorTally& ErrorTally::operator+=(const ErrorTally& other) noexcept {
  epe_sum += other.epe_sum;
  outliers += other.outliers;
  pixels += other.pixels;
  return *this;
}

double ErrorTally::mean_epe() const {
  if (pixels == 0) {
    throw NoValidPixels();
  }
  return epe_sum / static_cast<double>(pixels);
}

double ErrorTally::outlier_percent() const {
  if (pixels == 0) {
    throw NoValidPixels();
  }
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(pixels);
}

ErrorTally tally_errors(const FlowField& pred, const FlowField& gt, const ValidMask& valid,
                        const std::optional<ValidMask>& selection, OutlierRule rule) {
  require_same_shape(pred, gt, "metrics");
  require_same_shape(pred, valid, "metrics");
  if (selection) {
    require_same_shape(pred, *selection, "metrics");
  }
  ErrorTally tally;
  for (int r = 0; r < pred.height(); ++r) {
    for (int c = 0; c < pred.width(); ++c) {
      if (!valid.get(r, c) || (selection && !selection->get(r, c))) {
        continue;
      }
      const double du = static_cast<double>(pred.u(r, c)) - gt.u(r, c);
      const double dv = static_cast<double>(pred.v(r, c)) - gt.v(r, c);
      const double error = std::sqrt(du * du + dv * dv);
      const double magnitude = std::hypot(static_cast<double>(gt.u(r, c)), static_cast<double>(gt.v(r, c)));
      tally.epe_sum += error;
      tally.outliers += is_outlier(error, magnitude, rule) ? 1 : 0;
      ++tally.pixels;
    }
  }
  return tally;
}

double epe(const FlowField& pred, const FlowField& gt, const ValidMask& valid) {
  return tally_errors(pred, gt, valid).mean_epe();
}

double fl_all(const FlowField& pred, const FlowField& gt, const ValidMask& valid, OutlierRule rule) {
  return tally_errors(pred, gt, valid, std::nullopt, rule).outlier_percent();
}

std::vector<CalibrationPoint> calibration_curve(const FlowField& pred_forward, const FlowField& pred_backward,
                                                const FlowField& gt, const ValidMask& valid,
                                                const std::vector<double>& thresholds,
                                                const ConfidenceOptions& options) {
  CalibrationAccumulator acc(thresholds);
  acc.add(pred_forward, pred_backward, gt, valid, options);
  return acc.result();
}

CalibrationAccumulator::CalibrationAccumulator(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {
  require_thresholds(thresholds_);
  epe_sums_.assign(thresholds_.size(), 0.0);
  selected_.assign(thresholds_.size(), 0);
}

void CalibrationAccumulator::add(const FlowField& pred_forward, const FlowField& pred_backward, const FlowField& gt,
                                 const ValidMask& valid, const ConfidenceOptions& options) {
  require_same_shape(pred_forward, gt, "calibration_curve");
  require_same_shape(pred_forward, valid, "calibration_curve");
  if (valid.count() == 0) {
    throw NoValidPixels("calibration_curve: no valid pixels");
  }
  const auto conf = confidence_map(pred_forward, pred_backward, options);
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    const auto tally = tally_errors(pred_forward, gt, valid, consistency_mask(conf, thresholds_[i]));
    epe_sums_[i] += tally.epe_sum;
    selected_[i] += tally.pixels;
  }
  valid_ += valid.count();
}

std::vector<CalibrationPoint> CalibrationAccumulator::result() const {
  if (valid_ == 0) {
    throw NoValidPixels("calibration_curve: no valid pixels");
  }
  std::vector<CalibrationPoint> points;
  points.reserve(thresholds_.size());
  for (std::size_t i = 0; i < thresholds_.size(); ++i) {
    CalibrationPoint p;
    p.tau = thresholds_[i];
    p.selected = selected_[i];
    p.valid = valid_;
    p.coverage = static_cast<double>(selected_[i]) / static_cast<double>(valid_);
    if (selected_[i] > 0) {
      p.epe = epe_sums_[i] / static_cast<double>(selected_[i]);
    }
    points.push_back(p);
  }
  return points;
}

}  // namespace flowmix
