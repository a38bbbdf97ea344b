#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "flowmix/grid.hpp"

namespace flowmix {

inline constexpr int kMinImageSide = 8;

/// RGB image with intensities in [0, 1].
class Image : public Grid<float, 3> {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> rgb);

  /// Throws ContractViolation if a value is non-finite or outside [0, 1].
  void check_range() const;
};

enum class FlowDirection { kForward, kBackward };

std::string_view to_string(FlowDirection direction) noexcept;

/// Dense displacement field in pixels: channel 0 = u (horizontal), 1 = v (vertical).
class FlowField : public VectorGrid {
 public:
  FlowField() = default;
  FlowField(int height, int width, FlowDirection direction = FlowDirection::kForward);
  FlowField(int height, int width, std::vector<float> uv, FlowDirection direction = FlowDirection::kForward);

  FlowDirection direction() const noexcept { return direction_; }
  void set_direction(FlowDirection direction) noexcept { direction_ = direction; }

  float& u(int row, int col) noexcept { return (*this)(row, col, 0); }
  float& v(int row, int col) noexcept { return (*this)(row, col, 1); }
  float u(int row, int col) const noexcept { return (*this)(row, col, 0); }
  float v(int row, int col) const noexcept { return (*this)(row, col, 1); }

  bool all_finite() const noexcept;

  static FlowField constant(int height, int width, float u, float v,
                            FlowDirection direction = FlowDirection::kForward);

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  FlowDirection direction_ = FlowDirection::kForward;
};

/// Per-pixel validity (sparse ground truth, confidence gating).
class ValidMask : public BoolGrid {
 public:
  ValidMask() = default;
  ValidMask(int height, int width, bool fill = true);

  bool get(int row, int col) const noexcept { return (*this)(row, col) != 0; }
  void set(int row, int col, bool value) noexcept { (*this)(row, col) = value ? 1 : 0; }
  std::size_t count() const noexcept;
  double fraction() const noexcept;
};

/// Per-pixel reliability in (0, 1].
class ConfidenceMap : public ScalarGrid {
 public:
  ConfidenceMap() = default;
  ConfidenceMap(int height, int width, float fill = 1.0f) : ScalarGrid(height, width, fill) {}
};

}  // namespace flowmix
