#include <gtest/gtest.h>

#include <filesystem>

#include "fecil/checkpoint.hpp"

using namespace fecil;

namespace {

CompactNetwork small_net(Rng& rng) {
  BackboneConfig c;
  c.in_channels = 1;
  c.width = 4;
  c.blocks_per_stage = 1;
  c.stages = 2;
  c.image_side = 8;
  FeatureExtractor e(c, rng);
  Tensor x(Shape{6, 1, 8, 8});
  std::normal_distribution<float> n;
  for (auto& v : x.storage()) v = n(rng);
  e.forward(Var<float>(x), Mode::train);  // non-default running stats
  Classifier h(e.out_dim(), {7, 2, 5}, rng);
  return CompactNetwork{std::move(e), std::move(h)};
}

}  // namespace

TEST(Container, RoundTrip) {
  Container c;
  c.tensors.emplace_back("a", Tensor(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
  c.tensors.emplace_back("b.c", Tensor(Shape{1}, -0.5f));
  c.class_ids = {4, 0, 9};
  c.echo = "k=v\n";
  const auto bytes = encode_container(c);
  const auto d = decode_container(bytes);
  EXPECT_EQ(d.tensor("a"), c.tensor("a"));
  EXPECT_EQ(d.tensor("b.c")[0], -0.5f);
  EXPECT_EQ(d.class_ids, c.class_ids);
  EXPECT_EQ(d.echo, c.echo);
  EXPECT_EQ(encode_container(d), bytes);
  EXPECT_THROW(d.tensor("zzz"), FormatError);
}

TEST(Container, RejectsMalformed) {
  Container c;
  c.tensors.emplace_back("w", Tensor(Shape{4}, 1.0f));
  auto bytes = encode_container(c);
  for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() - 1}) {
    EXPECT_THROW(decode_container(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut)), FormatError) << cut;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_container(extra), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_container(magic), FormatError);
}

TEST(ModelCheckpoint, SaveLoadReproducesLogits) {
  Rng rng(3);
  auto net = small_net(rng);
  Normalization norm{{0.2f}, {0.5f}};
  const auto path = std::filesystem::temp_directory_path() / "fecil_ckpt_roundtrip.bin";
  save_model(path, net, norm, "extra=1\n");
  auto loaded = load_model(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.net.head.class_ids(), net.head.class_ids());
  EXPECT_EQ(loaded.norm.mean, norm.mean);
  EXPECT_NE(loaded.echo.find("extra=1"), std::string::npos);
  Tensor x(Shape{3, 1, 8, 8});
  std::normal_distribution<float> n;
  for (auto& v : x.storage()) v = n(rng);
  EXPECT_EQ(loaded.net.forward(Var<float>(x), Mode::eval).value(), net.forward(Var<float>(x), Mode::eval).value());
  EXPECT_EQ(param_count(loaded.net), param_count(net));
  // Every stored tensor round-trips bit for bit.
  EXPECT_EQ(encode_container(to_container(loaded.net, loaded.norm, "extra=1\n")),
            encode_container(to_container(net, norm, "extra=1\n")));
}
