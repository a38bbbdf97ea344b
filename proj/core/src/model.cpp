#include "flowmix/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "flowmix/errors.hpp"
#include "flowmix/tensor_bridge.hpp"

namespace flowmix {

namespace F = torch::nn::functional;
using json = nlohmann::json;

std::vector<torch::Tensor> FlowModel::parameters() const {
  std::vector<torch::Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::int64_t FlowModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

PredictionSequence FlowModel::predict(const Image& frame1, const Image& frame2, int iterations) {
  require_same_shape(frame1, frame2, "predict");
  torch::NoGradGuard no_grad;
  set_training(false);
  return forward(images_to_tensor({&frame1}), images_to_tensor({&frame2}), iterations);
}

// ---------------------------------------------------------------------------
// ToyFlowModel

void ToyModelConfig::validate() const {
  if (feature_dim < 1 || hidden_dim < 1 || context_dim < 1) {
    throw ContractViolation("model widths must be positive");
  }
  if (corr_levels < 1 || corr_levels > 4) throw ContractViolation("corr_levels must be in [1, 4]");
  if (corr_radius < 1 || corr_radius > 4) throw ContractViolation("corr_radius must be in [1, 4]");
}

namespace {

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

struct EncoderImpl : torch::nn::Module {
  EncoderImpl(int out_dim, bool normalize) : normalize(normalize) {
    c1 = register_module("c1", conv(3, 16, 3, 2));
    c2 = register_module("c2", conv(16, 32, 3, 2));
    c3 = register_module("c3", conv(32, out_dim, 3));
  }
  torch::Tensor norm(const torch::Tensor& x) const {
    return normalize ? F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5)) : x;
  }
  torch::Tensor forward(torch::Tensor x) {
    x = torch::relu(norm(c1->forward(x)));
    x = torch::relu(norm(c2->forward(x)));
    return c3->forward(x);
  }
  bool normalize;
  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
};
TORCH_MODULE(Encoder);

struct UpdateBlockImpl : torch::nn::Module {
  UpdateBlockImpl(int corr_channels, int hidden, int context) {
    convc = register_module("convc", conv(corr_channels, 32, 1));
    convf = register_module("convf", conv(2, 16, 3));
    convm = register_module("convm", conv(48, 30, 3));
    const int in = 32 + context;
    convz = register_module("convz", conv(hidden + in, hidden, 1));
    convr = register_module("convr", conv(hidden + in, hidden, 1));
    convq = register_module("convq", conv(hidden + in, hidden, 3));
    head1 = register_module("head1", conv(hidden, 32, 3));
    head2 = register_module("head2", conv(32, 2, 3));
    mask1 = register_module("mask1", conv(hidden, 48, 3));
    mask2 = register_module("mask2", conv(48, 9 * 16, 1));
  }

  torch::Tensor mask(const torch::Tensor& h) { return mask2->forward(torch::relu(mask1->forward(h))); }

  torch::Tensor forward(torch::Tensor& h, const torch::Tensor& ctx, const torch::Tensor& corr,
                        const torch::Tensor& flow) {
    auto c = torch::relu(convc->forward(corr));
    auto f = torch::relu(convf->forward(flow));
    auto m = torch::relu(convm->forward(torch::cat({c, f}, 1)));
    auto x = torch::cat({m, flow, ctx}, 1);

    auto hx = torch::cat({h, x}, 1);
    auto z = torch::sigmoid(convz->forward(hx));
    auto r = torch::sigmoid(convr->forward(hx));
    auto q = torch::tanh(convq->forward(torch::cat({r * h, x}, 1)));
    h = (1 - z) * h + z * q;
    return head2->forward(torch::relu(head1->forward(h)));
  }

  torch::nn::Conv2d convc{nullptr}, convf{nullptr}, convm{nullptr};
  torch::nn::Conv2d convz{nullptr}, convr{nullptr}, convq{nullptr};
  torch::nn::Conv2d head1{nullptr}, head2{nullptr};
  torch::nn::Conv2d mask1{nullptr}, mask2{nullptr};
};
TORCH_MODULE(UpdateBlock);

// [B, 2, h, w] pixel coordinates (x, y) of a regular grid.
torch::Tensor coords_grid(std::int64_t b, std::int64_t h, std::int64_t w, const torch::TensorOptions& opts) {
  auto ys = torch::arange(h, opts);
  auto xs = torch::arange(w, opts);
  auto grid = torch::meshgrid({ys, xs}, "ij");
  return torch::stack({grid[1], grid[0]}, 0).unsqueeze(0).expand({b, 2, h, w}).contiguous();
}

}  // namespace

struct ToyFlowModel::Net : torch::nn::Module {
  explicit Net(const ToyModelConfig& cfg) : cfg(cfg) {
    fnet = register_module("fnet", Encoder(cfg.feature_dim, true));
    cnet = register_module("cnet", Encoder(cfg.hidden_dim + cfg.context_dim, false));
    const int side = 2 * cfg.corr_radius + 1;
    update = register_module("update", UpdateBlock(cfg.corr_levels * side * side, cfg.hidden_dim, cfg.context_dim));
  }

  std::vector<torch::Tensor> correlation_pyramid(const torch::Tensor& f1, const torch::Tensor& f2) const {
    const auto b = f1.size(0), c = f1.size(1), h = f1.size(2), w = f1.size(3);
    auto a = f1.reshape({b, c, h * w}).transpose(1, 2);
    auto corr = torch::bmm(a, f2.reshape({b, c, h * w})) / std::sqrt(static_cast<double>(c));
    corr = corr.reshape({b * h * w, 1, h, w});
    std::vector<torch::Tensor> pyramid{corr};
    for (int l = 1; l < cfg.corr_levels; ++l) {
      if (corr.size(2) < 2 || corr.size(3) < 2) break;
      corr = F::avg_pool2d(corr, F::AvgPool2dFuncOptions(2).stride(2));
      pyramid.push_back(corr);
    }
    return pyramid;
  }

  torch::Tensor lookup(const std::vector<torch::Tensor>& pyramid, const torch::Tensor& coords) const {
    const auto b = coords.size(0), h = coords.size(2), w = coords.size(3);
    const int r = cfg.corr_radius;
    const auto opts = coords.options();
    auto d = torch::arange(-r, r + 1, opts);
    auto dd = torch::meshgrid({d, d}, "ij");
    // [1, S, S, 2] offsets (x, y)
    auto delta = torch::stack({dd[1], dd[0]}, -1).unsqueeze(0);
    auto centre = coords.permute({0, 2, 3, 1}).reshape({b * h * w, 1, 1, 2});

    std::vector<torch::Tensor> out;
    for (int l = 0; l < cfg.corr_levels; ++l) {
      // Levels missing from a too-small pyramid reuse the coarsest one.
      const auto& corr = pyramid[std::min<std::size_t>(l, pyramid.size() - 1)];
      const double scale = std::pow(2.0, l);
      auto pos = centre / scale + delta;  // [BHW, S, S, 2]
      const double hl = corr.size(2), wl = corr.size(3);
      auto gx = pos.select(-1, 0) * (wl > 1 ? 2.0 / (wl - 1) : 0.0) - 1.0;
      auto gy = pos.select(-1, 1) * (hl > 1 ? 2.0 / (hl - 1) : 0.0) - 1.0;
      auto grid = torch::stack({gx, gy}, -1);
      auto sampled = F::grid_sample(corr, grid,
                                    F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros)
                                        .align_corners(true));
      out.push_back(sampled.reshape({b, h, w, -1}));
    }
    return torch::cat(out, -1).permute({0, 3, 1, 2}).contiguous();
  }

  // Each full-resolution vector is a learned convex combination of the 3x3
  // coarse neighbourhood around its parent cell.
  static torch::Tensor convex_upsample(const torch::Tensor& flow, const torch::Tensor& mask) {
    const auto n = flow.size(0), h = flow.size(2), w = flow.size(3);
    auto weights = torch::softmax(mask.view({n, 1, 9, 4, 4, h, w}), 2);
    auto patches = F::unfold(4.0 * flow, F::UnfoldFuncOptions({3, 3}).padding(1)).view({n, 2, 9, 1, 1, h, w});
    auto up = (weights * patches).sum(2);  // [n, 2, 4, 4, h, w]
    return up.permute({0, 1, 4, 2, 5, 3}).reshape({n, 2, 4 * h, 4 * w});
  }

  PredictionSequence forward(const torch::Tensor& frame1, const torch::Tensor& frame2, int iterations) {
    const auto b = frame1.size(0), H = frame1.size(2), W = frame1.size(3);
    const std::int64_t ph = (8 - H % 8) % 8, pw = (8 - W % 8) % 8;
    auto pad = [&](const torch::Tensor& t) {
      auto x = 2.0 * t - 1.0;
      if (ph == 0 && pw == 0) return x;
      return F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
    };
    auto i1 = pad(frame1), i2 = pad(frame2);

    auto fmaps = fnet->forward(torch::cat({i1, i2}, 0));
    auto f1 = fmaps.narrow(0, 0, b), f2 = fmaps.narrow(0, b, b);
    auto pyramid = correlation_pyramid(f1, f2);

    auto c = cnet->forward(i1);
    auto h = torch::tanh(c.narrow(1, 0, cfg.hidden_dim));
    auto ctx = torch::relu(c.narrow(1, cfg.hidden_dim, cfg.context_dim));

    const auto hl = f1.size(2), wl = f1.size(3);
    auto coords0 = coords_grid(b, hl, wl, f1.options());
    auto coords1 = coords0.clone();

    PredictionSequence seq;
    seq.flows.reserve(iterations);
    for (int it = 0; it < iterations; ++it) {
      coords1 = coords1.detach();
      auto corr = lookup(pyramid, coords1);
      auto flow = coords1 - coords0;
      auto delta = update->forward(h, ctx, corr, flow);
      coords1 = coords1 + delta;
      auto up = convex_upsample(coords1 - coords0, 0.25 * update->mask(h));
      seq.flows.push_back(up.narrow(2, 0, H).narrow(3, 0, W));
    }
    return seq;
  }

  ToyModelConfig cfg;
  Encoder fnet{nullptr};
  Encoder cnet{nullptr};
  UpdateBlock update{nullptr};
};

ToyFlowModel::ToyFlowModel(ToyModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  torch::manual_seed(seed);
  net_ = std::make_shared<Net>(config_);
}

ToyFlowModel::~ToyFlowModel() = default;

PredictionSequence ToyFlowModel::forward(const torch::Tensor& frame1, const torch::Tensor& frame2,
                                         int iterations) {
  if (iterations < 1) throw ContractViolation("iterations must be positive");
  if (frame1.dim() != 4 || frame1.size(1) != 3 || !frame1.sizes().equals(frame2.sizes())) {
    throw ContractViolation("frames must be equally shaped [B, 3, H, W] tensors");
  }
  if (frame1.size(2) < kMinImageSide || frame1.size(3) < kMinImageSide) {
    throw ContractViolation("frames are smaller than the minimum side");
  }
  return net_->forward(frame1, frame2, iterations);
}

std::vector<std::pair<std::string, torch::Tensor>> ToyFlowModel::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : net_->named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

std::string ToyFlowModel::metadata_json() const {
  return json{{"feature_dim", config_.feature_dim},
              {"hidden_dim", config_.hidden_dim},
              {"context_dim", config_.context_dim},
              {"corr_levels", config_.corr_levels},
              {"corr_radius", config_.corr_radius}}
      .dump();
}

void ToyFlowModel::set_training(bool on) { net_->train(on); }

void ToyFlowModel::copy_parameters_from(const ToyFlowModel& other) {
  auto src = other.named_parameters();
  auto dst = named_parameters();
  if (src.size() != dst.size()) throw ContractViolation("parameter sets differ");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || !src[i].second.sizes().equals(dst[i].second.sizes())) {
      throw ContractViolation("parameter '" + dst[i].first + "' does not match");
    }
    dst[i].second.copy_(src[i].second);
  }
}

// ---------------------------------------------------------------------------
// OracleStubModel

std::uint64_t pair_hash(const torch::Tensor& frame1, const torch::Tensor& frame2) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_in = [&h](const torch::Tensor& t) {
    auto c = t.to(torch::kFloat32).contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel()) * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  mix_in(frame1);
  mix_in(frame2);
  return h;
}

OracleStubModel::OracleStubModel(float offset_u, float offset_v) : offset_u_(offset_u), offset_v_(offset_v) {}

void OracleStubModel::bind(const std::vector<LabeledSample>& dataset) {
  table_.clear();
  for (const auto& s : dataset) {
    auto f1 = images_to_tensor({&s.frame1})[0];
    auto f2 = images_to_tensor({&s.frame2})[0];
    table_[pair_hash(f1, f2)] = s.gt_flow;
  }
}

PredictionSequence OracleStubModel::forward(const torch::Tensor& frame1, const torch::Tensor& frame2,
                                            int iterations) {
  if (iterations < 1) throw ContractViolation("iterations must be positive");
  if (frame1.dim() != 4 || !frame1.sizes().equals(frame2.sizes())) {
    throw ContractViolation("frames must be equally shaped [B, 3, H, W] tensors");
  }
  const auto b = frame1.size(0), h = frame1.size(2), w = frame1.size(3);
  auto out = torch::zeros({b, 2, h, w}, torch::kFloat32);
  for (std::int64_t i = 0; i < b; ++i) {
    auto it = table_.find(pair_hash(frame1[i], frame2[i]));
    if (it == table_.end()) continue;
    auto gt = flows_to_tensor({&it->second})[0];
    out[i] = gt;
    out[i][0] += offset_u_;
    out[i][1] += offset_v_;
  }
  PredictionSequence seq;
  seq.flows.assign(iterations, out.to(frame1.dtype()));
  return seq;
}

std::string OracleStubModel::metadata_json() const {
  return json{{"offset_u", offset_u_}, {"offset_v", offset_v_}}.dump();
}

// ---------------------------------------------------------------------------

BidirectionalPrediction predict_bidirectional(FlowModel& model, const torch::Tensor& frame1,
                                              const torch::Tensor& frame2, int iterations) {
  BidirectionalPrediction out{model.forward(frame1, frame2, iterations), model.forward(frame2, frame1, iterations)};
  out.forward.direction = FlowDirection::kForward;
  out.backward.direction = FlowDirection::kBackward;
  return out;
}

BidirectionalPrediction predict_bidirectional(FlowModel& model, const Image& frame1, const Image& frame2,
                                              int iterations) {
  require_same_shape(frame1, frame2, "predict_bidirectional");
  torch::NoGradGuard no_grad;
  model.set_training(false);
  return predict_bidirectional(model, images_to_tensor({&frame1}), images_to_tensor({&frame2}), iterations);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'F', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CheckpointError("checkpoint " + path_.string() + " is truncated while reading " + what);
    }
  }
  template <typename T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof(T), what);
    return v;
  }
  std::string string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    if (n > (1u << 24)) throw CheckpointError("checkpoint " + path_.string() + " has an implausible " + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

 private:
  std::ifstream& in_;
  const std::filesystem::path& path_;
};

}  // namespace

void save_checkpoint(const FlowModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, std::string(model.kind()));
  put_string(out, model.metadata_json());
  const auto params = model.named_parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    put_string(out, name);
    auto t = tensor.detach().to(torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

std::unique_ptr<FlowModel> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint " + path.string() + " does not exist or is unreadable");
  Reader r(in, path);

  char magic[8];
  r.bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a flowmix checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("format version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto kind = r.string("model kind");
  json meta;
  try {
    meta = json::parse(r.string("metadata"));
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint metadata is not valid JSON: " + std::string(e.what()));
  }

  std::unique_ptr<FlowModel> model;
  try {
    if (kind == "toy_flow") {
      ToyModelConfig cfg;
      cfg.feature_dim = meta.at("feature_dim").get<int>();
      cfg.hidden_dim = meta.at("hidden_dim").get<int>();
      cfg.context_dim = meta.at("context_dim").get<int>();
      cfg.corr_levels = meta.at("corr_levels").get<int>();
      cfg.corr_radius = meta.at("corr_radius").get<int>();
      model = std::make_unique<ToyFlowModel>(cfg);
    } else if (kind == "oracle_stub") {
      model = std::make_unique<OracleStubModel>(meta.at("offset_u").get<float>(), meta.at("offset_v").get<float>());
    } else {
      throw CheckpointError("unknown model kind '" + kind + "' in checkpoint");
    }
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint metadata incomplete: " + std::string(e.what()));
  } catch (const ContractViolation& e) {
    throw CheckpointError("checkpoint metadata invalid: " + std::string(e.what()));
  }

  auto params = model->named_parameters();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  torch::NoGradGuard no_grad;
  for (auto& [name, tensor] : params) {
    const auto stored = r.string("tensor name");
    if (stored != name) throw CheckpointError("checkpoint tensor '" + stored + "' where '" + name + "' was expected");
    const auto ndim = r.get<std::uint32_t>("tensor rank");
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = r.get<std::int64_t>("tensor shape");
    if (!tensor.sizes().equals(dims)) throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape");
    auto buf = torch::empty(dims, torch::kFloat32);
    r.bytes(buf.data_ptr(), static_cast<std::size_t>(buf.numel()) * sizeof(float), "tensor data");
    tensor.copy_(buf);
  }
  return model;
}

}  // namespace flowmix
