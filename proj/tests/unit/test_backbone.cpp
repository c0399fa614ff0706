#include <gtest/gtest.h>

#include <cmath>

#include "fecil/backbone.hpp"

using namespace fecil;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.in_channels = 1;
  c.width = 4;
  c.blocks_per_stage = 1;
  c.stages = 2;
  c.image_side = 8;
  return c;
}

Tensor random_images(std::size_t n, const BackboneConfig& c, Rng& rng) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor t(Shape{n, static_cast<std::size_t>(c.in_channels), static_cast<std::size_t>(c.image_side),
                 static_cast<std::size_t>(c.image_side)});
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

CompactNetwork make_compact(const BackboneConfig& c, std::vector<int> ids, Rng& rng) {
  FeatureExtractor e(c, rng);
  Classifier h(e.out_dim(), std::move(ids), rng);
  return CompactNetwork{std::move(e), std::move(h)};
}

// Moves the running statistics away from their defaults.
void warm_stats(CompactNetwork& net, Rng& rng) {
  const auto& c = net.extractor.config();
  for (int i = 0; i < 3; ++i) net.extractor.forward(Var<float>(random_images(6, c, rng)), Mode::train);
}

}  // namespace

TEST(Backbone, OutputShapeAndCount) {
  Rng rng(1);
  const auto c = small_config();
  FeatureExtractor e(c, rng);
  EXPECT_EQ(e.out_dim(), 8u);
  const auto f = e.forward(Var<float>(random_images(3, c, rng)), Mode::train);
  EXPECT_EQ(f.shape(), (Shape{3, 8}));
  // stem 1*4*9 + bn 8; block 4->4: 2 convs 144 each + 2 bn 8 each;
  // block 4->8 stride 2: 4*8*9 + 8*8*9 + bn 16 + 16, shortcut 4*8 + bn 16
  const std::size_t expect = 36 + 8 + (144 + 8) * 2 + (288 + 16) + (576 + 16) + (32 + 16);
  EXPECT_EQ(e.param_count(), expect);
}

TEST(Backbone, RejectsWrongInput) {
  Rng rng(1);
  FeatureExtractor e(small_config(), rng);
  EXPECT_THROW(e.forward(Var<float>(Tensor(Shape{2, 3, 8, 8})), Mode::eval), ShapeError);
}

TEST(Backbone, DenseCount) {
  Rng rng(1);
  Classifier h(10, {0, 1, 2, 3, 4}, rng);
  EXPECT_EQ(param_count(h), 55u);
}

TEST(Backbone, ClassifierValidates) {
  EXPECT_THROW(Classifier(Tensor(Shape{2, 3}), Tensor(Shape{2}), {1, 1}), std::invalid_argument);
  EXPECT_THROW(Classifier(Tensor(Shape{2, 3}), Tensor(Shape{3}), {1, 2}), ShapeError);
}

TEST(Backbone, CopyIsDeep) {
  Rng rng(2);
  FeatureExtractor a(small_config(), rng);
  FeatureExtractor b = a;
  b.parameters()[0].mutable_value()[0] += 1.0f;
  EXPECT_NE(a.parameters()[0].value()[0], b.parameters()[0].value()[0]);
}

TEST(Expand, ShapesAndCounts) {
  Rng rng(3);
  const auto c = small_config();
  auto prev = make_compact(c, {4, 1, 0, 3, 2}, rng);
  auto net = expand(prev, {5, 6}, rng);
  EXPECT_EQ(net.head_big.in_dim(), 2 * prev.extractor.out_dim());
  EXPECT_EQ(net.prev.param_count() + net.next.param_count(), 2 * prev.extractor.param_count());
  auto out = forward_big(net, Var<float>(random_images(4, c, rng)), Mode::train);
  EXPECT_EQ(out.logits_big.shape(), (Shape{4, 7}));
  EXPECT_EQ(out.logits_aux.shape(), (Shape{4, 3}));
  EXPECT_EQ(net.old_class_ids(), (std::vector<int>{4, 1, 0, 3, 2}));
  EXPECT_EQ(net.new_class_ids(), (std::vector<int>{5, 6}));
  EXPECT_THROW(expand(prev, {}, rng), std::invalid_argument);
  EXPECT_THROW(expand(prev, {1}, rng), std::invalid_argument);
}

TEST(Expand, OldLogitsMatchPreviousModel) {
  Rng rng(4);
  const auto c = small_config();
  auto prev = make_compact(c, {0, 1, 2}, rng);
  warm_stats(prev, rng);
  auto net = expand(prev, {3, 4}, rng);
  const Tensor x = random_images(5, c, rng);
  const Tensor before = prev.forward(Var<float>(x), Mode::eval).value();
  auto out = forward_big(net, Var<float>(x), Mode::eval);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.logits_big.value().at(i, j), before.at(i, j), 1e-5);
  }
  // Feature layout: previous extractor output first.
  const Tensor f_old = prev.extractor.forward(Var<float>(x), Mode::eval).value();
  for (std::size_t j = 0; j < f_old.dim(1); ++j) EXPECT_EQ(out.features.value().at(0, j), f_old.at(0, j));
}

TEST(Expand, FrozenExtractorIsDeterministicAndUntouched) {
  Rng rng(5);
  const auto c = small_config();
  auto prev = make_compact(c, {0, 1}, rng);
  warm_stats(prev, rng);
  auto net = expand(prev, {2}, rng);
  std::vector<Tensor> before;
  net.prev.visit_tensors([&](const std::string&, Tensor& t) { before.push_back(t); });
  const Tensor x = random_images(4, c, rng);
  auto a = forward_big(net, Var<float>(x), Mode::train);
  auto b = forward_big(net, Var<float>(x), Mode::train);
  for (std::size_t j = 0; j < net.prev.out_dim(); ++j) EXPECT_EQ(a.features.value().at(1, j), b.features.value().at(1, j));
  backward(ops::sum(a.logits_big));
  for (const auto& p : net.prev.parameters()) EXPECT_FALSE(p.grad());
  std::vector<Tensor> after;
  net.prev.visit_tensors([&](const std::string&, Tensor& t) { after.push_back(t); });
  EXPECT_EQ(before, after);
}

TEST(AuxTargets, Mapping) {
  const std::vector<int> ids = {0, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(aux_targets({3, 5, 6, 0}, ids, 5), (std::vector<int>{0, 1, 2, 0}));
  EXPECT_THROW(aux_targets({9}, ids, 5), std::invalid_argument);
}

TEST(WeightAlign, Ratios) {
  Tensor w(Shape{4, 2}, std::vector<float>{1, 0, 0, 1, 2, 0, 0, 2});
  Classifier h(w, Tensor(Shape{4}), {0, 1, 2, 3});
  const auto a = weight_align(h, {0, 1}, {2, 3});
  EXPECT_FLOAT_EQ(a.weight().value().at(2, 0), 1.0f);
  EXPECT_FLOAT_EQ(a.weight().value().at(0, 0), 1.0f);
  const auto same = weight_align(a, {0, 1}, {2, 3});
  EXPECT_TRUE(same.weight().value() == a.weight().value());
  EXPECT_THROW(weight_align(h, {0}, {2, 3}), std::invalid_argument);
  Classifier zero(Tensor(Shape{2, 2}, std::vector<float>{1, 0, 0, 0}), Tensor(Shape{2}), {0, 1});
  EXPECT_THROW(weight_align(zero, {0}, {1}), std::domain_error);
}

TEST(WeightAlign, NormsAndPerGroupArgmax) {
  Rng rng(6);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor w(Shape{7, 6}), b(Shape{7});
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 6; ++j) w.at(i, j) = n(rng) * (i >= 4 ? 3.0f : 1.0f);
    for (auto& v : b.storage()) v = n(rng);
    Classifier h(w, b, {0, 1, 2, 3, 4, 5, 6});
    const std::vector<int> old_ids = {0, 1, 2, 3}, new_ids = {4, 5, 6};
    const auto a = weight_align(h, old_ids, new_ids);
    EXPECT_NEAR(mean_row_norm(a, new_ids), mean_row_norm(a, old_ids), 1e-6);
    Tensor x(Shape{50, 6});
    for (int rep = 0; rep < 20; ++rep) {
      for (auto& v : x.storage()) v = n(rng);
      const Tensor l0 = h.forward(Var<float>(x)).value(), l1 = a.forward(Var<float>(x)).value();
      for (std::size_t i = 0; i < 50; ++i) {
        auto argmax = [&](const Tensor& l, std::size_t lo, std::size_t hi) {
          std::size_t best = lo;
          for (std::size_t j = lo; j < hi; ++j)
            if (l.at(i, j) > l.at(i, best)) best = j;
          return best;
        };
        EXPECT_EQ(argmax(l0, 0, 4), argmax(l1, 0, 4));
        // Bias is not rescaled, so the new-group argmax is compared on the weight term only.
        Tensor wx0(Shape{7}), wx1(Shape{7});
        for (std::size_t r = 4; r < 7; ++r) {
          wx0[r] = l0.at(i, r) - b[r];
          wx1[r] = l1.at(i, r) - b[r];
        }
        std::size_t b0 = 4, b1 = 4;
        for (std::size_t r = 4; r < 7; ++r) {
          if (wx0[r] > wx0[b0]) b0 = r;
          if (wx1[r] > wx1[b1]) b1 = r;
        }
        EXPECT_EQ(b0, b1);
      }
    }
  }
}

TEST(CompressInit, CopyAndSize) {
  Rng rng(7);
  const auto c = small_config();
  auto prev = make_compact(c, {0, 1, 2}, rng);
  warm_stats(prev, rng);
  auto same = compress_init(prev, {}, rng);
  const Tensor x = random_images(3, c, rng);
  EXPECT_EQ(same.forward(Var<float>(x), Mode::eval).value(), prev.forward(Var<float>(x), Mode::eval).value());
  auto grown = compress_init(prev, {3, 4}, rng);
  EXPECT_EQ(param_count(grown), param_count(prev) + 2 * (prev.extractor.out_dim() + 1));
  EXPECT_EQ(param_count(grown.extractor), param_count(prev.extractor));
  const Tensor l = grown.forward(Var<float>(x), Mode::eval).value();
  const Tensor p = prev.forward(Var<float>(x), Mode::eval).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(l.at(i, j), p.at(i, j), 1e-6);
}

TEST(BackboneConfig, EchoRoundTrip) {
  auto c = small_config();
  EXPECT_EQ(BackboneConfig::parse_echo(c.echo()), c);
  c.width = 0;
  EXPECT_ANY_THROW(c.validate());
}
