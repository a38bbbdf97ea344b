#pragma once

#include <torch/torch.h>

#include <vector>

#include "flowmix/types.hpp"

namespace flowmix {

/// [B, 3, H, W] float tensor from equally sized images.
torch::Tensor images_to_tensor(const std::vector<const Image*>& images);
/// [B, 2, H, W] float tensor.
torch::Tensor flows_to_tensor(const std::vector<const FlowField*>& flows);
/// [B, H, W] float tensor of 0 / 1.
torch::Tensor masks_to_tensor(const std::vector<const ValidMask*>& masks);

/// Sample `index` of a [B, 2, H, W] tensor as a FlowField.
FlowField tensor_to_flow(const torch::Tensor& flows, std::int64_t index,
                         FlowDirection direction = FlowDirection::kForward);

}  // namespace flowmix
