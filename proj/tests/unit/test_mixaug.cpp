#include <gtest/gtest.h>

#include <cmath>

#include "fecil/mixaug.hpp"

using namespace fecil;

namespace {

Tensor constant_image(std::size_t c, std::size_t h, std::size_t w, float v) { return Tensor(Shape{c, h, w}, v); }

std::size_t count_equal(const Tensor& a, float v) {
  std::size_t n = 0;
  for (float x : a.values()) n += x == v;
  return n;
}

ExemplarMemory two_class_memory(int a, int b) {
  ExemplarMemory mem({BudgetMode::total, 100});
  std::vector<Exemplar> ea, eb;
  for (std::size_t i = 0; i < 3; ++i) {
    ea.push_back(Exemplar{i, a, constant_image(1, 16, 16, 1.0f)});
    eb.push_back(Exemplar{10 + i, b, constant_image(1, 16, 16, 1.0f)});
  }
  mem.put_class(a, ea);
  mem.put_class(b, eb);
  return mem;
}

}  // namespace

TEST(Lambda, BetaMoments) {
  Rng rng(1);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda(0.2, rng);
    ASSERT_GT(l, 0.0);
    ASSERT_LT(l, 1.0);
    s += l;
    s2 += l * l;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(var, 1.0 / (4 * (2 * 0.2 + 1)), 0.005);
  EXPECT_THROW(sample_lambda(0.0, rng), std::invalid_argument);
}

TEST(Box, SideLengths) {
  Rng rng(2);
  EXPECT_EQ(sample_box(32, 32, 1.0, rng).rw, 0.0);
  const Box full = sample_box(32, 32, 0.0, rng);
  EXPECT_EQ(full.rw, 32.0);
  EXPECT_EQ(full.rh, 32.0);
  EXPECT_DOUBLE_EQ(sample_box(32, 32, 0.75, rng).rw, 16.0);
  for (int i = 0; i < 1000; ++i) {
    const Box b = sample_box(16, 16, 0.5, rng);
    EXPECT_GE(b.cx, 0.0);
    EXPECT_LT(b.cx, 16.0);
  }
  EXPECT_THROW(sample_box(16, 16, 1.5, rng), std::invalid_argument);
}

TEST(Box, InteriorAreaExactForWholeSides) {
  // lambda = 1 - (s/16)^2 gives whole-pixel sides s.
  for (int s = 0; s <= 16; ++s) {
    const double lam = 1.0 - (s / 16.0) * (s / 16.0);
    Box b{8.0, 8.0, 16 * std::sqrt(1 - lam), 16 * std::sqrt(1 - lam)};
    const PixelRect r = clip_box(b, 16, 16);
    EXPECT_EQ(r.area(), s * s);
    EXPECT_NEAR(r.area(), b.rw * b.rh, 1.0 / 256);
  }
}

TEST(Box, InteriorAreaWithinRoundingOtherwise) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double lam = sample_lambda(0.2, rng);
    Box b = sample_box(16, 16, lam, rng);
    b.cx = b.cy = 8.0;  // centred, never clipped
    const PixelRect r = clip_box(b, 16, 16);
    EXPECT_LE(std::abs(r.area() - b.rw * b.rh), 0.5 * (b.rw + b.rh) + 0.25);
  }
}

TEST(CutMix, EmptyAndFullBoxes) {
  const Tensor a = constant_image(2, 8, 8, 0.0f), b = constant_image(2, 8, 8, 1.0f);
  auto same = cutmix_apply(a, b, Box{4, 4, 0, 0});
  EXPECT_EQ(same.image, a);
  EXPECT_EQ(same.lambda_eff, 1.0);
  auto full = cutmix_apply(a, b, Box{4, 4, 8, 8});
  EXPECT_EQ(full.image, b);
  EXPECT_EQ(full.lambda_eff, 0.0);
  EXPECT_THROW(cutmix_apply(a, Tensor(Shape{2, 8, 7}), Box{}), ShapeError);
}

TEST(CutMix, ClippedBoxPixelCount) {
  const Tensor a = constant_image(3, 16, 16, 0.0f), b = constant_image(3, 16, 16, 1.0f);
  auto r = cutmix_apply(a, b, Box{15.0, 0.5, 8, 8});  // hangs over two borders
  const std::size_t from_j = count_equal(r.image, 1.0f) / 3;
  EXPECT_EQ(from_j, 5u * 4u);
  EXPECT_DOUBLE_EQ(r.lambda_eff, 1.0 - from_j / 256.0);
}

TEST(CutMix, MaskLawOverSampledPlans) {
  Rng rng(4);
  const Tensor a = constant_image(1, 16, 16, 0.0f), b = constant_image(1, 16, 16, 1.0f);
  for (int i = 0; i < 10000; ++i) {
    const double lam = sample_lambda(0.2, rng);
    auto r = cutmix_apply(a, b, sample_box(16, 16, lam, rng));
    ASSERT_EQ(static_cast<double>(count_equal(r.image, 1.0f)), (1.0 - r.lambda_eff) * 256.0);
  }
}

TEST(Mixup, Values) {
  const Tensor a = constant_image(1, 4, 4, 0.0f), b = constant_image(1, 4, 4, 1.0f);
  EXPECT_EQ(mixup_apply(a, b, 1.0), a);
  const Tensor half = mixup_apply(a, b, 0.5);
  for (float v : half.values()) EXPECT_EQ(v, 0.5f);
  Rng rng(5);
  std::normal_distribution<float> n;
  Tensor x(Shape{2, 3, 3}), y(Shape{2, 3, 3});
  for (auto& v : x.storage()) v = n(rng);
  for (auto& v : y.storage()) v = n(rng);
  const Tensor m = mixup_apply(x, y, 0.3);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(m[i], 0.3 * x[i] + 0.7 * y[i], 1e-6);
}

TEST(MixedTarget, Rows) {
  EXPECT_EQ(mixed_target(2, 0, 1.0, 3), (std::vector<double>{0, 0, 1}));
  EXPECT_EQ(mixed_target(0, 1, 0.5, 3), (std::vector<double>{0.5, 0.5, 0}));
  EXPECT_EQ(mixed_target(1, 1, 0.3, 3), (std::vector<double>{0, 1, 0}));
  EXPECT_THROW(mixed_target(3, 0, 0.5, 3), std::invalid_argument);
}

TEST(RehearsalPairs, PartnersComeFromMemory) {
  const auto mem = two_class_memory(0, 1);
  std::vector<Tensor> imgs(5, constant_image(1, 16, 16, 0.0f));
  std::vector<int> labels(5, 4);
  Rng rng(6);
  for (auto aug : {CompressAug::r_cutmix, CompressAug::r_mixup}) {
    const auto out = rehearsal_pair_batch(imgs, labels, mem, aug, 0.2, rng);
    ASSERT_EQ(out.size(), 5u);
    for (const auto& s : out) {
      EXPECT_EQ(s.label_i, 4);
      EXPECT_TRUE(s.label_j == 0 || s.label_j == 1);
    }
  }
  EXPECT_THROW(rehearsal_pair_batch(imgs, labels, mem, CompressAug::none, 0.2, rng), std::invalid_argument);
}

TEST(RehearsalPairs, RaiseOldClassMassOnImbalancedStream) {
  // 90 % new-class images; memory holds old classes 0 and 1.
  const auto mem = two_class_memory(0, 1);
  Rng rng(7);
  double mass_r = 0, mass_w = 0;
  for (int batch = 0; batch < 400; ++batch) {
    std::vector<Tensor> imgs;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
      imgs.push_back(constant_image(1, 16, 16, 0.0f));
      labels.push_back(i == 0 ? static_cast<int>(uniform_index(rng, 2)) : 2 + static_cast<int>(uniform_index(rng, 2)));
    }
    auto old_mass = [](const MixedSample& s) {
      const auto t = mixed_target(s.label_i, s.label_j, s.lambda_eff, 4);
      return t[0] + t[1];
    };
    for (const auto& s : rehearsal_pair_batch(imgs, labels, mem, CompressAug::r_cutmix, 0.2, rng)) mass_r += old_mass(s);
    for (const auto& s : within_batch_mix(imgs, labels, CompressAug::cutmix, 0.2, rng)) mass_w += old_mass(s);
  }
  EXPECT_GT(mass_r / 4000, mass_w / 4000 + 0.2);
}

TEST(Augmentations, ParseNames) {
  for (auto a : {CompressAug::none, CompressAug::mixup, CompressAug::cutmix, CompressAug::r_mixup, CompressAug::r_cutmix})
    EXPECT_EQ(parse_compress_aug(to_string(a)), a);
  EXPECT_THROW(parse_compress_aug("cutout"), std::invalid_argument);
  EXPECT_TRUE(is_rehearsal(CompressAug::r_mixup));
  EXPECT_FALSE(is_rehearsal(CompressAug::cutmix));
}
