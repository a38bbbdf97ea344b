#pragma once

#include "flowmix/types.hpp"

namespace flowmix {

struct FlowVisualization {
  Image image;
  /// Flow magnitude mapped to full saturation (per-image maximum).
  double max_magnitude = 0.0;
};

/// Middlebury color wheel: hue encodes direction, saturation encodes magnitude
/// relative to the largest vector in the field. Zero flow maps to white.
FlowVisualization flow_to_color(const FlowField& flow);

}  // namespace flowmix
