#include "flowmix/types.hpp"

#include <algorithm>
#include <cmath>

namespace flowmix {

namespace {

void check_image_size(int height, int width) {
  if (height < kMinImageSide || width < kMinImageSide) {
    throw ContractViolation("images must be at least " + std::to_string(kMinImageSide) + "x" +
                            std::to_string(kMinImageSide) + ", got " + std::to_string(height) + "x" +
                            std::to_string(width));
  }
}

}  // namespace

Image::Image(int height, int width, float fill) : Grid<float, 3>(height, width, fill) {
  check_image_size(height, width);
}

Image::Image(int height, int width, std::vector<float> rgb) : Grid<float, 3>(height, width, std::move(rgb)) {
  check_image_size(height, width);
}

void Image::check_range() const {
  for (float value : values()) {
    if (!std::isfinite(value) || value < 0.0f || value > 1.0f) {
      throw ContractViolation("image intensity outside [0, 1]: " + std::to_string(value));
    }
  }
}

std::string_view to_string(FlowDirection direction) noexcept {
  return direction == FlowDirection::kForward ? "forward" : "backward";
}

FlowField::FlowField(int height, int width, FlowDirection direction)
    : VectorGrid(height, width, 0.0f), direction_(direction) {}

FlowField::FlowField(int height, int width, std::vector<float> uv, FlowDirection direction)
    : VectorGrid(height, width, std::move(uv)), direction_(direction) {}

bool FlowField::all_finite() const noexcept {
  return std::all_of(values().begin(), values().end(), [](float x) { return std::isfinite(x); });
}

FlowField FlowField::constant(int height, int width, float u, float v, FlowDirection direction) {
  FlowField field(height, width, direction);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      field.u(r, c) = u;
      field.v(r, c) = v;
    }
  }
  return field;
}

ValidMask::ValidMask(int height, int width, bool fill) : BoolGrid(height, width, fill ? 1 : 0) {}

std::size_t ValidMask::count() const noexcept {
  return static_cast<std::size_t>(std::count_if(values().begin(), values().end(), [](auto b) { return b != 0; }));
}

double ValidMask::fraction() const noexcept {
  return empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(pixel_count());
}

}  // namespace flowmix
