#include "flowmix/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace flowmix {

namespace {

void require_alpha(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ContractViolation("Beta concentration alpha must be positive, got " + std::to_string(alpha));
  }
}

// log of a Gamma(shape, 1) draw. For shape < 1 the draw itself underflows
// easily, so use Gamma(a) = Gamma(a + 1) * U^(1/a) in log space.
double log_gamma_draw(double shape, Rng& rng) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> gamma(shape, 1.0);
    double g = gamma(rng);
    while (g <= 0.0) {
      g = gamma(rng);
    }
    return std::log(g);
  }
  std::gamma_distribution<double> gamma(shape + 1.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double g = gamma(rng);
  while (g <= 0.0) {
    g = gamma(rng);
  }
  double u = uniform(rng);
  while (u <= 0.0) {
    u = uniform(rng);
  }
  return std::log(g) + std::log(u) / shape;
}

double beta_draw(double alpha, Rng& rng) {
  const double log_x = log_gamma_draw(alpha, rng);
  const double log_y = log_gamma_draw(alpha, rng);
  return 1.0 / (1.0 + std::exp(log_y - log_x));
}

MixingRatio draw_ratio(double alpha, const AugmentConfig& config, Rng& rng) {
  if (config.forced_lambda) {
    return MixingRatio(*config.forced_lambda);
  }
  return sample_lambda(alpha, rng);
}

void require_same_image_shape(const Image& a, const Image& b, const char* what) { require_same_shape(a, b, what); }

std::vector<std::size_t> eligible_indices(const FramePool& pool, std::string_view exclude_sample) {
  std::vector<std::size_t> eligible;
  eligible.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.ref(i).sample_id != exclude_sample) {
      eligible.push_back(i);
    }
  }
  return eligible;
}

Distractor draw_from(const FramePool& pool, const std::vector<std::size_t>& eligible, int height, int width,
                     Rng& rng) {
  if (eligible.empty()) {
    throw EmptySourceError("distractor pool has no eligible frames");
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  const std::size_t index = eligible[pick(rng)];
  return {random_resized_crop(pool.frame(index), height, width, rng), pool.ref(index)};
}

float sample_bilinear(const Image& img, float y, float x, int ch) {
  y = std::clamp(y, 0.0f, static_cast<float>(img.height() - 1));
  x = std::clamp(x, 0.0f, static_cast<float>(img.width() - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const float fx = x - static_cast<float>(x0);
  const float fy = y - static_cast<float>(y0);
  const float top = (1.0f - fx) * img(y0, x0, ch) + fx * img(y0, x1, ch);
  const float bottom = (1.0f - fx) * img(y1, x0, ch) + fx * img(y1, x1, ch);
  return (1.0f - fy) * top + fy * bottom;
}

}  // namespace

MixingRatio::MixingRatio(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ContractViolation("mixing ratio must lie in [0, 1], got " + std::to_string(value));
  }
}

MixingRatio sample_lambda(double alpha, Rng& rng) {
  require_alpha(alpha);
  double lambda = beta_draw(alpha, rng);
  if (lambda <= 0.0 || lambda >= 1.0 || !std::isfinite(lambda)) {
    lambda = beta_draw(alpha, rng);
  }
  if (!std::isfinite(lambda)) {
    lambda = 0.5;
  }
  return MixingRatio(std::clamp(lambda, kLambdaMargin, 1.0 - kLambdaMargin));
}

Image mix(const Image& base, const Image& distractor, MixingRatio lambda) {
  require_same_image_shape(base, distractor, "mix");
  const auto l = static_cast<float>(lambda.value());
  Image out(base.height(), base.width());
  auto a = base.values();
  auto b = distractor.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    // Exact at the endpoints and never outside [min(a, b), max(a, b)].
    const float value = l * a[i] + (1.0f - l) * b[i];
    o[i] = std::clamp(value, std::min(a[i], b[i]), std::max(a[i], b[i]));
  }
  return out;
}

std::string_view to_string(AugmentVariant variant) noexcept {
  switch (variant) {
    case AugmentVariant::kDistractSecond: return "distract_second";
    case AugmentVariant::kDistractFirst: return "distract_first";
    case AugmentVariant::kDistractBothSame: return "distract_both_same";
    case AugmentVariant::kDistractBothDiff: return "distract_both_diff";
    case AugmentVariant::kGaussianNoise: return "gaussian_noise";
    case AugmentVariant::kRandomShapes: return "random_shapes";
    case AugmentVariant::kNone: return "none";
  }
  return "none";
}

AugmentVariant parse_augment_variant(std::string_view name) {
  for (auto v : {AugmentVariant::kDistractSecond, AugmentVariant::kDistractFirst, AugmentVariant::kDistractBothSame,
                 AugmentVariant::kDistractBothDiff, AugmentVariant::kGaussianNoise, AugmentVariant::kRandomShapes,
                 AugmentVariant::kNone}) {
    if (to_string(v) == name) {
      return v;
    }
  }
  throw ContractViolation("unknown augmentation variant '" + std::string(name) + "'");
}

void AugmentConfig::validate() const {
  require_alpha(alpha1);
  require_alpha(alpha2);
  if (!(noise_sigma >= 0.0)) {
    throw ContractViolation("noise_sigma must be non-negative");
  }
  if (shape_count.min < 0 || shape_count.max < shape_count.min) {
    throw ContractViolation("shape_count range must satisfy 0 <= min <= max");
  }
  if (forced_lambda) {
    MixingRatio check(*forced_lambda);
    (void)check;
  }
}

void FramePool::add(std::string sample_id, int frame_index, std::shared_ptr<const Image> frame) {
  if (!frame) {
    throw ContractViolation("FramePool::add: null frame");
  }
  entries_.push_back({FrameRef{std::move(sample_id), frame_index}, std::move(frame)});
}

Image random_resized_crop(const Image& source, int height, int width, Rng& rng) {
  std::uniform_real_distribution<double> side(0.6, 1.0);
  const double fit = std::min(static_cast<double>(source.height()) / height, static_cast<double>(source.width()) / width);
  const double scale = side(rng) * fit;
  const double crop_h = scale * height;
  const double crop_w = scale * width;
  std::uniform_real_distribution<double> oy(0.0, std::max(0.0, source.height() - crop_h));
  std::uniform_real_distribution<double> ox(0.0, std::max(0.0, source.width() - crop_w));
  const double y0 = oy(rng);
  const double x0 = ox(rng);

  Image out(height, width);
  for (int r = 0; r < height; ++r) {
    const auto y = static_cast<float>(y0 + (r + 0.5) * crop_h / height - 0.5);
    for (int c = 0; c < width; ++c) {
      const auto x = static_cast<float>(x0 + (c + 0.5) * crop_w / width - 0.5);
      for (int ch = 0; ch < 3; ++ch) {
        out(r, c, ch) = std::clamp(sample_bilinear(source, y, x, ch), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

Distractor sample_distractor(const FramePool& pool, std::string_view exclude_sample, int height, int width,
                             Rng& rng) {
  return draw_from(pool, eligible_indices(pool, exclude_sample), height, width, rng);
}

DistractedPair make_distracted_pair(const Image& frame1, const Image& frame2, const AugmentConfig& config,
                                    const FramePool& pool, std::string_view sample_id, Rng& rng) {
  require_same_image_shape(frame1, frame2, "make_distracted_pair");
  config.validate();
  const int h = frame1.height();
  const int w = frame1.width();

  DistractedPair pair{frame1, frame2, std::nullopt, std::nullopt, config.variant, {}, {}};
  switch (config.variant) {
    case AugmentVariant::kNone:
      break;
    case AugmentVariant::kDistractSecond: {
      auto d = sample_distractor(pool, sample_id, h, w, rng);
      pair.lambda2 = draw_ratio(config.alpha2, config, rng);
      pair.frame2 = mix(frame2, d.image, *pair.lambda2);
      pair.distractor_ids.push_back(std::move(d.source));
      pair.distractors.push_back(std::move(d.image));
      break;
    }
    case AugmentVariant::kDistractFirst: {
      auto d = sample_distractor(pool, sample_id, h, w, rng);
      pair.lambda1 = draw_ratio(config.alpha1, config, rng);
      pair.frame1 = mix(frame1, d.image, *pair.lambda1);
      pair.distractor_ids.push_back(std::move(d.source));
      pair.distractors.push_back(std::move(d.image));
      break;
    }
    case AugmentVariant::kDistractBothSame: {
      auto d = sample_distractor(pool, sample_id, h, w, rng);
      pair.lambda1 = draw_ratio(config.alpha1, config, rng);
      pair.lambda2 = draw_ratio(config.alpha2, config, rng);
      pair.frame1 = mix(frame1, d.image, *pair.lambda1);
      pair.frame2 = mix(frame2, d.image, *pair.lambda2);
      pair.distractor_ids.push_back(std::move(d.source));
      pair.distractors.push_back(std::move(d.image));
      break;
    }
    case AugmentVariant::kDistractBothDiff: {
      auto eligible = eligible_indices(pool, sample_id);
      auto first = draw_from(pool, eligible, h, w, rng);
      std::erase_if(eligible, [&](std::size_t i) { return pool.ref(i) == first.source; });
      if (eligible.empty()) {
        throw EmptySourceError("distract_both_diff needs two distinct distractor frames");
      }
      auto second = draw_from(pool, eligible, h, w, rng);
      pair.lambda1 = draw_ratio(config.alpha1, config, rng);
      pair.lambda2 = draw_ratio(config.alpha2, config, rng);
      pair.frame1 = mix(frame1, first.image, *pair.lambda1);
      pair.frame2 = mix(frame2, second.image, *pair.lambda2);
      pair.distractor_ids.push_back(std::move(first.source));
      pair.distractor_ids.push_back(std::move(second.source));
      pair.distractors.push_back(std::move(first.image));
      pair.distractors.push_back(std::move(second.image));
      break;
    }
    case AugmentVariant::kGaussianNoise:
      pair.frame2 = gaussian_perturb(frame2, config.noise_sigma, rng);
      break;
    case AugmentVariant::kRandomShapes: {
      pair.lambda2 = draw_ratio(config.alpha2, config, rng);
      pair.frame2 = random_shapes_perturb(frame2, *pair.lambda2, rng, config.shape_count);
      break;
    }
  }
  return pair;
}

Image gaussian_perturb(const Image& img, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) {
    throw ContractViolation("noise sigma must be non-negative");
  }
  if (sigma == 0.0) {
    return img;
  }
  std::normal_distribution<double> noise(0.0, sigma);
  Image out(img.height(), img.width());
  auto in = img.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = static_cast<float>(std::clamp(static_cast<double>(in[i]) + noise(rng), 0.0, 1.0));
  }
  return out;
}

ShapesImage synthesize_shapes(int height, int width, ShapeCountRange range, Rng& rng) {
  if (range.min < 0 || range.max < range.min) {
    throw ContractViolation("shape count range must satisfy 0 <= min <= max");
  }
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  auto random_color = [&] { return std::array<float, 3>{unit(rng), unit(rng), unit(rng)}; };

  const auto background = random_color();
  Image img(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        img(r, c, ch) = background[ch];
      }
    }
  }

  std::uniform_int_distribution<int> count_dist(range.min, range.max);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  const int count = count_dist(rng);
  const float min_side = static_cast<float>(std::min(height, width));
  for (int s = 0; s < count; ++s) {
    const int kind = kind_dist(rng);
    const auto color = random_color();
    const float cx = unit(rng) * static_cast<float>(width);
    const float cy = unit(rng) * static_cast<float>(height);
    const float size = min_side * (0.06f + 0.24f * unit(rng));

    std::array<float, 6> tri{};
    float half_w = size;
    float half_h = size;
    if (kind == 1) {
      for (int k = 0; k < 3; ++k) {
        tri[2 * k] = cx + (2.0f * unit(rng) - 1.0f) * size;
        tri[2 * k + 1] = cy + (2.0f * unit(rng) - 1.0f) * size;
      }
    } else if (kind == 2) {
      half_w = size * (0.4f + 0.6f * unit(rng));
      half_h = size * (0.4f + 0.6f * unit(rng));
    }

    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const float x = static_cast<float>(c) + 0.5f;
        const float y = static_cast<float>(r) + 0.5f;
        bool inside = false;
        if (kind == 0) {
          inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= size * size;
        } else if (kind == 1) {
          auto edge = [&](int a, int b) {
            return (tri[2 * b] - tri[2 * a]) * (y - tri[2 * a + 1]) - (tri[2 * b + 1] - tri[2 * a + 1]) * (x - tri[2 * a]);
          };
          const float e0 = edge(0, 1);
          const float e1 = edge(1, 2);
          const float e2 = edge(2, 0);
          inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        } else {
          inside = std::abs(x - cx) <= half_w && std::abs(y - cy) <= half_h;
        }
        if (inside) {
          for (int ch = 0; ch < 3; ++ch) {
            img(r, c, ch) = color[ch];
          }
        }
      }
    }
  }
  return {std::move(img), count};
}

Image random_shapes_perturb(const Image& img, MixingRatio lambda, Rng& rng, ShapeCountRange range) {
  auto shapes = synthesize_shapes(img.height(), img.width(), range, rng);
  return mix(img, shapes.image, lambda);
}

}  // namespace flowmix
