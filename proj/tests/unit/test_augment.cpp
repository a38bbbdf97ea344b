#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "flowmix/augment.hpp"
#include "test_util.hpp"

using namespace flowmix;

namespace {

Image constant_image(int h, int w, float value) { return Image(h, w, value); }

// P(X < x) for X ~ Beta(a, a), by Simpson integration after substituting
// x = t^(1/a), which removes the singularity at zero.
double beta_symmetric_cdf(double a, double x) {
  const double upper = std::pow(x, a);
  const int n = 20000;
  const double h = upper / n;
  auto f = [&](double t) { return std::pow(1.0 - std::pow(t, 1.0 / a), a - 1.0); };
  double sum = f(0.0) + f(upper);
  for (int i = 1; i < n; ++i) sum += f(i * h) * (i % 2 ? 4.0 : 2.0);
  return (sum * h / 3.0) / a / std::beta(a, a);
}

FramePool pool_of(const std::vector<std::string>& ids, int h, int w, Rng& rng) {
  FramePool pool;
  for (const auto& id : ids) {
    pool.add(id, 0, std::make_shared<Image>(testutil::random_image(h, w, rng)));
    pool.add(id, 1, std::make_shared<Image>(testutil::random_image(h, w, rng)));
  }
  return pool;
}

}  // namespace

TEST(SampleLambda, UniformAtAlphaOne) {
  Rng rng(2024);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(sample_lambda(1.0, rng).value());
  std::sort(xs.begin(), xs.end());
  double d = 0.0;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d = std::max({d, (i + 1) / n - xs[i], xs[i] - i / n});
  }
  // Kolmogorov-Smirnov critical value at significance 0.01.
  EXPECT_LT(d, 1.628 / std::sqrt(n));
}

TEST(SampleLambda, MeanIsOneHalfForAnyAlpha) {
  for (double alpha : {0.1, 0.5, 1.0, 2.0, 8.0}) {
    Rng rng(7);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) sum += sample_lambda(alpha, rng).value();
    EXPECT_NEAR(sum / 10000.0, 0.5, 0.02) << "alpha " << alpha;
  }
}

TEST(SampleLambda, SmallAlphaConcentratesAtEnds) {
  const double expected = 2.0 * beta_symmetric_cdf(0.1, 0.1);
  EXPECT_GT(expected, 0.8);
  Rng rng(99);
  int tails = 0;
  for (int i = 0; i < 10000; ++i) {
    const double l = sample_lambda(0.1, rng).value();
    EXPECT_GT(l, 0.0);
    EXPECT_LT(l, 1.0);
    if (l < 0.1 || l > 0.9) ++tails;
  }
  const double observed = tails / 10000.0;
  EXPECT_GE(observed, 0.8);
  EXPECT_NEAR(observed, expected, 0.015);
}

TEST(SampleLambda, DeterministicAndValidated) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_lambda(0.7, a).value(), sample_lambda(0.7, b).value());
  EXPECT_THROW(sample_lambda(0.0, a), ContractViolation);
  EXPECT_THROW(sample_lambda(-1.0, a), ContractViolation);
}

TEST(MixingRatio, RangeChecked) {
  EXPECT_NO_THROW(MixingRatio(0.0));
  EXPECT_NO_THROW(MixingRatio(1.0));
  EXPECT_THROW(MixingRatio(1.01), ContractViolation);
  EXPECT_THROW(MixingRatio(-0.01), ContractViolation);
  EXPECT_THROW(MixingRatio(std::nan("")), ContractViolation);
}

TEST(Mix, Endpoints) {
  Rng rng(1);
  auto a = testutil::random_image(16, 16, rng);
  auto b = testutil::random_image(16, 16, rng);
  EXPECT_EQ(mix(a, b, MixingRatio(1.0)), a);
  EXPECT_EQ(mix(a, b, MixingRatio(0.0)), b);
}

TEST(Mix, ConstantCombination) {
  auto out = mix(constant_image(8, 8, 0.2f), constant_image(8, 8, 0.6f), MixingRatio(0.25));
  for (float v : out.values()) EXPECT_NEAR(v, 0.5f, 1e-7);
}

TEST(Mix, ConvexAndSymmetric) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = testutil::random_image(8, 8, rng);
    auto b = testutil::random_image(8, 8, rng);
    const double l = u(rng);
    auto ab = mix(a, b, MixingRatio(l));
    auto ba = mix(b, a, MixingRatio(1.0 - l));
    for (std::size_t i = 0; i < ab.values().size(); ++i) {
      const float lo = std::min(a.values()[i], b.values()[i]);
      const float hi = std::max(a.values()[i], b.values()[i]);
      ASSERT_GE(ab.values()[i], lo);
      ASSERT_LE(ab.values()[i], hi);
      ASSERT_NEAR(ab.values()[i], ba.values()[i], 1e-6);
    }
  }
}

TEST(Mix, ShapeMismatch) {
  EXPECT_THROW(mix(Image(8, 8), Image(8, 9), MixingRatio(0.5)), ContractViolation);
}

TEST(SampleDistractor, SingleEligibleFrame) {
  Rng rng(4);
  FramePool pool;
  auto only = std::make_shared<Image>(testutil::random_image(16, 16, rng));
  pool.add("other", 0, only);
  pool.add("self", 0, std::make_shared<Image>(testutil::random_image(16, 16, rng)));
  for (int i = 0; i < 20; ++i) {
    auto d = sample_distractor(pool, "self", 16, 16, rng);
    EXPECT_EQ(d.source.sample_id, "other");
  }
}

TEST(SampleDistractor, NeverReturnsExcludedSample) {
  Rng rng(5);
  auto pool = pool_of({"a", "b", "c", "d"}, 12, 12, rng);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_NE(sample_distractor(pool, "c", 12, 12, rng).source.sample_id, "c");
  }
}

TEST(SampleDistractor, SeededSequenceRepeats) {
  Rng build(6);
  auto pool = pool_of({"a", "b", "c", "d", "e"}, 12, 12, build);
  Rng r1(77), r2(77);
  for (int i = 0; i < 50; ++i) {
    auto x = sample_distractor(pool, "a", 8, 10, r1);
    auto y = sample_distractor(pool, "a", 8, 10, r2);
    EXPECT_EQ(x.source, y.source);
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.image.height(), 8);
    EXPECT_EQ(x.image.width(), 10);
  }
}

TEST(SampleDistractor, EmptyPoolIsAnError) {
  Rng rng(1);
  FramePool empty;
  EXPECT_THROW(sample_distractor(empty, "x", 8, 8, rng), EmptySourceError);
  FramePool self_only;
  self_only.add("x", 0, std::make_shared<Image>(8, 8));
  EXPECT_THROW(sample_distractor(self_only, "x", 8, 8, rng), EmptySourceError);
}

TEST(RandomResizedCrop, IdentityCropOfConstantImage) {
  Rng rng(2);
  auto out = random_resized_crop(constant_image(20, 30, 0.3f), 10, 10, rng);
  for (float v : out.values()) EXPECT_NEAR(v, 0.3f, 1e-6);
}

class DistractedPairTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(10);
    f1 = testutil::random_image(16, 16, rng);
    f2 = testutil::random_image(16, 16, rng);
    pool = pool_of({"me", "p", "q", "r"}, 16, 16, rng);
  }
  DistractedPair run(AugmentVariant v, std::optional<double> forced = std::nullopt, std::uint64_t seed = 1) {
    AugmentConfig cfg;
    cfg.variant = v;
    cfg.forced_lambda = forced;
    Rng rng(seed);
    return make_distracted_pair(f1, f2, cfg, pool, "me", rng);
  }
  Image f1, f2;
  FramePool pool;
};

TEST_F(DistractedPairTest, NoneIsPassThrough) {
  auto p = run(AugmentVariant::kNone);
  EXPECT_EQ(p.frame1, f1);
  EXPECT_EQ(p.frame2, f2);
  EXPECT_FALSE(p.lambda1);
  EXPECT_FALSE(p.lambda2);
  EXPECT_TRUE(p.distractor_ids.empty());
}

TEST_F(DistractedPairTest, ForcedOneIsIdentity) {
  auto p = run(AugmentVariant::kDistractSecond, 1.0);
  EXPECT_EQ(p.frame1, f1);
  EXPECT_EQ(p.frame2, f2);
}

TEST_F(DistractedPairTest, LambdasMatchPerturbedFrames) {
  auto second = run(AugmentVariant::kDistractSecond);
  EXPECT_FALSE(second.lambda1);
  ASSERT_TRUE(second.lambda2);
  EXPECT_EQ(second.frame1, f1);
  EXPECT_NE(second.frame2, f2);

  auto first = run(AugmentVariant::kDistractFirst);
  ASSERT_TRUE(first.lambda1);
  EXPECT_FALSE(first.lambda2);
  EXPECT_EQ(first.frame2, f2);

  auto same = run(AugmentVariant::kDistractBothSame);
  ASSERT_TRUE(same.lambda1 && same.lambda2);
  EXPECT_EQ(same.distractor_ids.size(), 1u);
  EXPECT_EQ(mix(f1, same.distractors[0], *same.lambda1), same.frame1);
  EXPECT_EQ(mix(f2, same.distractors[0], *same.lambda2), same.frame2);

  auto noise = run(AugmentVariant::kGaussianNoise);
  EXPECT_FALSE(noise.lambda1 || noise.lambda2);
  EXPECT_EQ(noise.frame1, f1);

  auto shapes = run(AugmentVariant::kRandomShapes);
  EXPECT_FALSE(shapes.lambda1);
  EXPECT_TRUE(shapes.lambda2);
}

TEST_F(DistractedPairTest, BothDiffRecordsTwoDistinctDistractors) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto p = run(AugmentVariant::kDistractBothDiff, std::nullopt, seed);
    ASSERT_EQ(p.distractor_ids.size(), 2u);
    EXPECT_NE(p.distractor_ids[0], p.distractor_ids[1]);
    ASSERT_EQ(p.distractors.size(), 2u);
  }
}

TEST_F(DistractedPairTest, NeverDrawsOwnFrames) {
  for (auto v : {AugmentVariant::kDistractSecond, AugmentVariant::kDistractFirst, AugmentVariant::kDistractBothSame,
                 AugmentVariant::kDistractBothDiff}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      for (const auto& id : run(v, std::nullopt, seed).distractor_ids) EXPECT_NE(id.sample_id, "me");
    }
  }
}

TEST_F(DistractedPairTest, Deterministic) {
  for (auto v : {AugmentVariant::kDistractSecond, AugmentVariant::kDistractBothDiff, AugmentVariant::kGaussianNoise,
                 AugmentVariant::kRandomShapes}) {
    auto a = run(v, std::nullopt, 42);
    auto b = run(v, std::nullopt, 42);
    EXPECT_EQ(a.frame1, b.frame1);
    EXPECT_EQ(a.frame2, b.frame2);
    EXPECT_EQ(a.distractor_ids, b.distractor_ids);
  }
}

TEST(GaussianPerturb, ZeroSigmaIsIdentity) {
  Rng rng(1);
  auto img = testutil::random_image(16, 16, rng);
  EXPECT_EQ(gaussian_perturb(img, 0.0, rng), img);
  EXPECT_THROW(gaussian_perturb(img, -0.1, rng), ContractViolation);
}

TEST(GaussianPerturb, NoiseStdOnUnclippedInterior) {
  Rng rng(8);
  Image img(200, 200, 0.5f);
  auto out = gaussian_perturb(img, 0.1, rng);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < out.values().size(); ++i) {
    const float o = out.values()[i];
    EXPECT_GE(o, 0.0f);
    EXPECT_LE(o, 1.0f);
    if (o > 0.0f && o < 1.0f) {
      const double d = o - img.values()[i];
      sum += d;
      sq += d * d;
      ++n;
    }
  }
  ASSERT_GE(n, 100000u);
  const double mean = sum / n;
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 0.1, 0.01);
}

TEST(GaussianPerturb, OutputAlwaysInRange) {
  Rng rng(9);
  auto img = testutil::random_image(32, 32, rng);
  gaussian_perturb(img, 2.0, rng).check_range();
}

TEST(RandomShapes, LambdaOneIsIdentity) {
  Rng rng(3);
  auto img = testutil::random_image(16, 16, rng);
  EXPECT_EQ(random_shapes_perturb(img, MixingRatio(1.0), rng), img);
}

TEST(RandomShapes, ShapeCountInRange) {
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    auto s = synthesize_shapes(16, 16, ShapeCountRange{5, 10}, rng);
    ASSERT_GE(s.shape_count, 5);
    ASSERT_LE(s.shape_count, 10);
    s.image.check_range();
    seen.insert(s.shape_count);
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(RandomShapes, SeededDeterminism) {
  Rng src(4);
  auto img = testutil::random_image(24, 24, src);
  Rng a(11), b(11);
  EXPECT_EQ(random_shapes_perturb(img, MixingRatio(0.4), a), random_shapes_perturb(img, MixingRatio(0.4), b));
}

TEST(AugmentConfig, DefaultsAndValidation) {
  AugmentConfig cfg;
  EXPECT_EQ(cfg.variant, AugmentVariant::kDistractSecond);
  EXPECT_EQ(cfg.alpha2, 1.0);
  EXPECT_NO_THROW(cfg.validate());
  cfg.alpha1 = 0.0;
  EXPECT_THROW(cfg.validate(), ContractViolation);
  cfg.alpha1 = 1.0;
  cfg.forced_lambda = 1.5;
  EXPECT_THROW(cfg.validate(), ContractViolation);
}

TEST(AugmentVariant, NamesRoundTrip) {
  for (auto v : {AugmentVariant::kDistractSecond, AugmentVariant::kDistractFirst, AugmentVariant::kDistractBothSame,
                 AugmentVariant::kDistractBothDiff, AugmentVariant::kGaussianNoise, AugmentVariant::kRandomShapes,
                 AugmentVariant::kNone}) {
    EXPECT_EQ(parse_augment_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_augment_variant("cutmix"), ContractViolation);
}
