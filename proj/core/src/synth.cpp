#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "flowmix/data.hpp"

namespace flowmix {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Vec2 {
  double x;
  double y;
};

// Multi-octave value noise, evaluable at any real position.
class NoiseTexture {
 public:
  NoiseTexture(std::uint64_t seed, int octaves, double base_period, std::array<float, 3> base, float contrast)
      : seed_(seed), octaves_(octaves), base_period_(base_period), base_(base), contrast_(contrast) {}

  float color(double x, double y, int channel) const {
    double sum = 0.0;
    double norm = 0.0;
    double amplitude = 1.0;
    double period = base_period_;
    for (int o = 0; o < octaves_; ++o) {
      sum += amplitude * octave(x / period, y / period, o, channel);
      norm += amplitude;
      amplitude *= 0.6;
      period *= 0.5;
    }
    const double n = sum / norm;  // [0, 1]
    return static_cast<float>(std::clamp(base_[channel] + contrast_ * (n - 0.5), 0.0, 1.0));
  }

 private:
  double lattice(std::int64_t ix, std::int64_t iy, int octave, int channel) const noexcept {
    std::uint64_t h = splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (static_cast<std::uint64_t>(iy) * 0x8cb92ba72f3d8dd7ULL));
    h = splitmix64(h ^ (static_cast<std::uint64_t>(octave) << 8 | static_cast<std::uint64_t>(channel)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  double octave(double x, double y, int octave, int channel) const noexcept {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const double tx = x - fx;
    const double ty = y - fy;
    const double sx = tx * tx * (3.0 - 2.0 * tx);
    const double sy = ty * ty * (3.0 - 2.0 * ty);
    const double a = lattice(ix, iy, octave, channel);
    const double b = lattice(ix + 1, iy, octave, channel);
    const double c = lattice(ix, iy + 1, octave, channel);
    const double d = lattice(ix + 1, iy + 1, octave, channel);
    return (1.0 - sy) * ((1.0 - sx) * a + sx * b) + sy * ((1.0 - sx) * c + sx * d);
  }

  std::uint64_t seed_;
  int octaves_;
  double base_period_;
  std::array<float, 3> base_;
  float contrast_;
};

// One rigidly moving layer. Layer coordinates coincide with frame-1 pixel coordinates.
struct Layer {
  NoiseTexture texture;
  bool full_frame = false;
  int shape = 0;  // 0 ellipse, 1 rectangle
  Vec2 center{};
  double radius_x = 0.0;
  double radius_y = 0.0;
  double shape_angle = 0.0;
  double theta = 0.0;  // rotation between frames, radians
  Vec2 translation{};

  bool contains(Vec2 p) const noexcept {
    if (full_frame) {
      return true;
    }
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    const double c = std::cos(shape_angle);
    const double s = std::sin(shape_angle);
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    if (shape == 0) {
      return (lx * lx) / (radius_x * radius_x) + (ly * ly) / (radius_y * radius_y) <= 1.0;
    }
    return std::abs(lx) <= radius_x && std::abs(ly) <= radius_y;
  }

  // Frame-1 position -> frame-2 position.
  Vec2 forward(Vec2 p) const noexcept {
    if (theta == 0.0) {
      return {p.x + translation.x, p.y + translation.y};
    }
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    return {center.x + c * dx - s * dy + translation.x, center.y + s * dx + c * dy + translation.y};
  }

  // Frame-2 position -> layer (frame-1) position.
  Vec2 inverse(Vec2 q) const noexcept {
    if (theta == 0.0) {
      return {q.x - translation.x, q.y - translation.y};
    }
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double dx = q.x - translation.x - center.x;
    const double dy = q.y - translation.y - center.y;
    return {center.x + c * dx + s * dy, center.y - s * dx + c * dy};
  }
};

NoiseTexture random_texture(const SynthConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<float> base(0.25f, 0.75f);
  std::uniform_real_distribution<float> contrast(0.35f, 0.5f);
  const std::uint64_t seed = rng();
  const std::array<float, 3> b{base(rng), base(rng), base(rng)};
  return NoiseTexture(seed, cfg.noise_octaves, cfg.noise_base_period, b, contrast(rng));
}

Vec2 random_translation(const SynthConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> t(-cfg.max_translation, cfg.max_translation);
  const double tx = cfg.max_translation > 0.0 ? t(rng) : 0.0;
  const double ty = cfg.max_translation > 0.0 ? t(rng) : 0.0;
  return {tx, ty};
}

void gaussian_blur(Image& img, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& k : kernel) {
    k /= total;
  }
  const int h = img.height();
  const int w = img.width();
  Image tmp(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * img(r, std::clamp(c + k, 0, w - 1), ch);
        }
        tmp(r, c, ch) = static_cast<float>(acc);
      }
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp(std::clamp(r + k, 0, h - 1), c, ch);
        }
        img(r, c, ch) = std::clamp(static_cast<float>(acc), 0.0f, 1.0f);
      }
    }
  }
}

void apply_effects(const SynthConfig& cfg, Image& frame1, Image& frame2, Rng& rng) {
  const auto& fx = cfg.effects;
  if (fx.overlay_max_alpha > 0.0) {
    const auto overlay = random_texture(cfg, rng);
    std::uniform_real_distribution<double> alpha_dist(0.0, fx.overlay_max_alpha);
    for (Image* frame : {&frame1, &frame2}) {
      const double alpha = alpha_dist(rng);
      for (int r = 0; r < frame->height(); ++r) {
        for (int c = 0; c < frame->width(); ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            const double o = overlay.color(c, r, ch);
            (*frame)(r, c, ch) = static_cast<float>((1.0 - alpha) * (*frame)(r, c, ch) + alpha * o);
          }
        }
      }
    }
  }
  if (fx.blur_sigma > 0.0) {
    gaussian_blur(frame2, fx.blur_sigma);
  }
  if (fx.noise_sigma > 0.0) {
    frame1 = gaussian_perturb(frame1, fx.noise_sigma, rng);
    frame2 = gaussian_perturb(frame2, fx.noise_sigma, rng);
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return splitmix64(base ^ splitmix64(stream + 0x5851f42d4c957f2dULL));
}

void SynthConfig::validate() const {
  if (height < kMinImageSide || width < kMinImageSide) {
    throw ContractViolation("synthetic resolution must be at least 8x8");
  }
  if (sprite_count_min < 0 || sprite_count_max < sprite_count_min) {
    throw ContractViolation("sprite count range must satisfy 0 <= min <= max");
  }
  if (!(max_translation >= 0.0) || !(max_rotation_deg >= 0.0)) {
    throw ContractViolation("motion bounds must be non-negative");
  }
  if (noise_octaves < 1 || !(noise_base_period > 0.0)) {
    throw ContractViolation("noise texture needs at least one octave and a positive period");
  }
  if (effects.overlay_max_alpha < 0.0 || effects.overlay_max_alpha > 1.0 || effects.blur_sigma < 0.0 ||
      effects.noise_sigma < 0.0) {
    throw ContractViolation("scene effects out of range");
  }
}

SynthScene generate_scene(const SynthConfig& cfg, Rng& rng, std::string id) {
  cfg.validate();
  const int h = cfg.height;
  const int w = cfg.width;
  const double side = std::min(h, w);

  std::vector<Layer> layers;
  {
    Layer background{random_texture(cfg, rng)};
    background.full_frame = true;
    background.translation = random_translation(cfg, rng);
    layers.push_back(background);
  }
  std::uniform_int_distribution<int> count_dist(cfg.sprite_count_min, cfg.sprite_count_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int sprites = count_dist(rng);
  const double max_theta = cfg.max_rotation_deg * std::numbers::pi / 180.0;
  for (int s = 0; s < sprites; ++s) {
    Layer sprite{random_texture(cfg, rng)};
    sprite.shape = unit(rng) < 0.5 ? 0 : 1;
    sprite.center = {w * (0.15 + 0.7 * unit(rng)), h * (0.15 + 0.7 * unit(rng))};
    sprite.radius_x = side * (0.1 + 0.15 * unit(rng));
    sprite.radius_y = side * (0.1 + 0.15 * unit(rng));
    sprite.shape_angle = std::numbers::pi * unit(rng);
    sprite.theta = max_theta > 0.0 ? max_theta * (2.0 * unit(rng) - 1.0) : 0.0;
    sprite.translation = random_translation(cfg, rng);
    layers.push_back(sprite);
  }

  SynthScene scene{
      LabeledSample{Image(h, w), Image(h, w), FlowField(h, w), ValidMask(h, w, true), std::move(id)},
      Grid<std::int16_t, 1>(h, w, 0), Grid<std::int16_t, 1>(h, w, 0)};
  auto& sample = scene.sample;
  const int n = static_cast<int>(layers.size());

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Vec2 p{static_cast<double>(c), static_cast<double>(r)};

      // Frame 1: topmost layer covering p in its initial pose.
      int top = 0;
      for (int k = n - 1; k > 0; --k) {
        if (layers[k].contains(p)) {
          top = k;
          break;
        }
      }
      scene.layers1(r, c) = static_cast<std::int16_t>(top);
      for (int ch = 0; ch < 3; ++ch) {
        sample.frame1(r, c, ch) = layers[top].texture.color(p.x, p.y, ch);
      }
      const Vec2 moved = layers[top].forward(p);
      sample.gt_flow.u(r, c) = static_cast<float>(moved.x - p.x);
      sample.gt_flow.v(r, c) = static_cast<float>(moved.y - p.y);
      const bool inside = moved.x >= 0.0 && moved.x <= w - 1 && moved.y >= 0.0 && moved.y <= h - 1;
      sample.valid.set(r, c, inside);

      // Frame 2: topmost layer whose moved footprint covers p.
      int top2 = 0;
      Vec2 source = layers[0].inverse(p);
      for (int k = n - 1; k > 0; --k) {
        const Vec2 q = layers[k].inverse(p);
        if (layers[k].contains(q)) {
          top2 = k;
          source = q;
          break;
        }
      }
      scene.layers2(r, c) = static_cast<std::int16_t>(top2);
      for (int ch = 0; ch < 3; ++ch) {
        sample.frame2(r, c, ch) = layers[top2].texture.color(source.x, source.y, ch);
      }
    }
  }

  apply_effects(cfg, sample.frame1, sample.frame2, rng);
  return scene;
}

LabeledSample generate_sample(const SynthConfig& cfg, Rng& rng, std::string id) {
  return generate_scene(cfg, rng, std::move(id)).sample;
}

std::vector<LabeledSample> generate_dataset(const SynthConfig& cfg, int count, const std::string& id_prefix) {
  std::vector<LabeledSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    out.push_back(generate_sample(cfg, rng, id_prefix + std::to_string(i)));
  }
  return out;
}

std::vector<UnlabeledSample> generate_unlabeled(const SynthConfig& cfg, int count, const std::string& id_prefix) {
  std::vector<UnlabeledSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    auto s = generate_sample(cfg, rng, id_prefix + std::to_string(i));
    out.push_back({std::move(s.frame1), std::move(s.frame2), std::move(s.id)});
  }
  return out;
}

FramePool make_frame_pool(const std::vector<LabeledSample>& samples) {
  FramePool pool;
  for (const auto& s : samples) {
    pool.add(s.id, 0, std::make_shared<const Image>(s.frame1));
    pool.add(s.id, 1, std::make_shared<const Image>(s.frame2));
  }
  return pool;
}

FramePool make_frame_pool(const std::vector<UnlabeledSample>& samples) {
  FramePool pool;
  for (const auto& s : samples) {
    pool.add(s.id, 0, std::make_shared<const Image>(s.frame1));
    pool.add(s.id, 1, std::make_shared<const Image>(s.frame2));
  }
  return pool;
}

}  // namespace flowmix
