#include "flowmix/tensor_bridge.hpp"

#include <cstring>

namespace flowmix {

namespace {

template <typename GridT>
void require_uniform(const std::vector<const GridT*>& items, const char* what) {
  if (items.empty()) {
    throw ContractViolation(std::string(what) + ": empty batch");
  }
  for (const auto* item : items) {
    if (item == nullptr || !item->same_shape(*items.front())) {
      throw ContractViolation(std::string(what) + ": batch members differ in shape");
    }
  }
}

}  // namespace

torch::Tensor images_to_tensor(const std::vector<const Image*>& images) {
  require_uniform(images, "images_to_tensor");
  const int h = images.front()->height();
  const int w = images.front()->width();
  auto out = torch::empty({static_cast<std::int64_t>(images.size()), 3, h, w}, torch::kFloat32);
  auto acc = out.accessor<float, 4>();
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = *images[b];
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        for (int ch = 0; ch < 3; ++ch) {
          acc[b][ch][r][c] = img(r, c, ch);
        }
      }
    }
  }
  return out;
}

torch::Tensor flows_to_tensor(const std::vector<const FlowField*>& flows) {
  require_uniform(flows, "flows_to_tensor");
  const int h = flows.front()->height();
  const int w = flows.front()->width();
  auto out = torch::empty({static_cast<std::int64_t>(flows.size()), 2, h, w}, torch::kFloat32);
  auto acc = out.accessor<float, 4>();
  for (std::size_t b = 0; b < flows.size(); ++b) {
    const auto& f = *flows[b];
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        acc[b][0][r][c] = f.u(r, c);
        acc[b][1][r][c] = f.v(r, c);
      }
    }
  }
  return out;
}

torch::Tensor masks_to_tensor(const std::vector<const ValidMask*>& masks) {
  require_uniform(masks, "masks_to_tensor");
  const int h = masks.front()->height();
  const int w = masks.front()->width();
  auto out = torch::empty({static_cast<std::int64_t>(masks.size()), h, w}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (std::size_t b = 0; b < masks.size(); ++b) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        acc[b][r][c] = masks[b]->get(r, c) ? 1.0f : 0.0f;
      }
    }
  }
  return out;
}

FlowField tensor_to_flow(const torch::Tensor& flows, std::int64_t index, FlowDirection direction) {
  if (flows.dim() != 4 || flows.size(1) != 2) {
    throw ContractViolation("tensor_to_flow: expected [B, 2, H, W]");
  }
  auto t = flows[index].detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const auto h = static_cast<int>(t.size(1));
  const auto w = static_cast<int>(t.size(2));
  FlowField out(h, w, direction);
  const float* u = t.data_ptr<float>();
  const float* v = u + static_cast<std::ptrdiff_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      out.u(r, c) = u[r * w + c];
      out.v(r, c) = v[r * w + c];
    }
  }
  return out;
}

}  // namespace flowmix
