#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowmix/errors.hpp"

namespace flowmix {

/// Dense row-major H x W x Channels grid with interleaved channels.
template <typename T, int Channels>
class Grid {
 public:
  static constexpr int kChannels = Channels;
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) {
      throw ContractViolation("grid dimensions must be positive, got " + std::to_string(height) + "x" +
                              std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * width * Channels, fill);
  }
  Grid(int height, int width, std::vector<T> data) : height_(height), width_(width), data_(std::move(data)) {
    if (height <= 0 || width <= 0) {
      throw ContractViolation("grid dimensions must be positive");
    }
    if (data_.size() != static_cast<std::size_t>(height) * width * Channels) {
      throw ContractViolation("grid payload size does not match " + std::to_string(height) + "x" +
                              std::to_string(width) + "x" + std::to_string(Channels));
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int row, int col, int channel = 0) noexcept { return data_[index(row, col, channel)]; }
  const T& operator()(int row, int col, int channel = 0) const noexcept { return data_[index(row, col, channel)]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U, int D>
  bool same_shape(const Grid<U, D>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int row, int col, int channel) const noexcept {
    return (static_cast<std::size_t>(row) * width_ + col) * Channels + channel;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using ScalarGrid = Grid<float, 1>;
/// Two-channel grid; channel 0 is horizontal (x / u), channel 1 vertical (y / v).
using VectorGrid = Grid<float, 2>;
using BoolGrid = Grid<std::uint8_t, 1>;

template <typename T, int C, typename U, int D>
void require_same_shape(const Grid<T, C>& a, const Grid<U, D>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ContractViolation(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()));
  }
}

}  // namespace flowmix
