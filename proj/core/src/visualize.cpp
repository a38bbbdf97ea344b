#include "flowmix/visualize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace flowmix {

namespace {

std::vector<std::array<float, 3>> make_color_wheel() {
  // Relative lengths of the color transitions, chosen for perceptual spacing.
  constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
  std::vector<std::array<float, 3>> wheel;
  auto push = [&](float r, float g, float b) { wheel.push_back({r / 255.0f, g / 255.0f, b / 255.0f}); };
  for (int i = 0; i < kRY; ++i) push(255, 255.0f * i / kRY, 0);
  for (int i = 0; i < kYG; ++i) push(255 - 255.0f * i / kYG, 255, 0);
  for (int i = 0; i < kGC; ++i) push(0, 255, 255.0f * i / kGC);
  for (int i = 0; i < kCB; ++i) push(0, 255 - 255.0f * i / kCB, 255);
  for (int i = 0; i < kBM; ++i) push(255.0f * i / kBM, 0, 255);
  for (int i = 0; i < kMR; ++i) push(255, 0, 255 - 255.0f * i / kMR);
  return wheel;
}

}  // namespace

FlowVisualization flow_to_color(const FlowField& flow) {
  static const auto wheel = make_color_wheel();
  const int ncols = static_cast<int>(wheel.size());

  double max_rad = 0.0;
  for (int r = 0; r < flow.height(); ++r) {
    for (int c = 0; c < flow.width(); ++c) {
      if (std::isfinite(flow.u(r, c)) && std::isfinite(flow.v(r, c))) {
        max_rad = std::max(max_rad, std::hypot(static_cast<double>(flow.u(r, c)), static_cast<double>(flow.v(r, c))));
      }
    }
  }
  const double scale = max_rad > 0.0 ? 1.0 / max_rad : 0.0;

  FlowVisualization out{Image(flow.height(), flow.width()), max_rad};
  for (int r = 0; r < flow.height(); ++r) {
    for (int c = 0; c < flow.width(); ++c) {
      double fx = flow.u(r, c) * scale;
      double fy = flow.v(r, c) * scale;
      if (!std::isfinite(fx) || !std::isfinite(fy)) {
        fx = fy = 0.0;
      }
      const double rad = std::sqrt(fx * fx + fy * fy);
      const double a = std::atan2(-fy, -fx) / std::numbers::pi;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      const int k0 = static_cast<int>(fk);
      const int k1 = (k0 + 1) % ncols;
      const double f = fk - k0;
      for (int ch = 0; ch < 3; ++ch) {
        double col = (1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch];
        col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
        out.image(r, c, ch) = static_cast<float>(std::clamp(col, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace flowmix
