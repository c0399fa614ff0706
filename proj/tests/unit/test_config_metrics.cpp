#include <gtest/gtest.h>

#include "fecil/config.hpp"
#include "fecil/metrics.hpp"
#include "fecil/trainer.hpp"

using namespace fecil;

namespace {

template <typename Fn>
std::string config_error(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, SectionsCommentsQuotes) {
  const auto c = Config::parse("# top\n[train]\nepochs_expand = 5  # inline\nname = \"a # b\"\n[run]\nseed=3\n", "x.toml");
  EXPECT_EQ(c.get_int("train.epochs_expand", 0), 5);
  EXPECT_EQ(c.get_string("train.name", ""), "a # b");
  EXPECT_EQ(c.get_int("run.seed", 0), 3);
  EXPECT_EQ(c.get_int("run.other", 9), 9);
  EXPECT_EQ(Config::parse("a = [1, 2,3]").get_int_list("a", {}), (std::vector<long long>{1, 2, 3}));
}

TEST(Config, ErrorsNameLineAndKey) {
  EXPECT_NE(config_error([] { Config::parse("a = 1\nb\n", "f.toml"); }).find("f.toml:2"), std::string::npos);
  EXPECT_NE(config_error([] { Config::parse("a = 1\na = 2\n", "f.toml"); }).find("line 1"), std::string::npos);
  const auto bad = Config::parse("\n[train]\nepochs_expand = ten\n", "f.toml");
  const std::string msg = config_error([&] { bad.get_int("train.epochs_expand", 0); });
  EXPECT_NE(msg.find("f.toml:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train.epochs_expand"), std::string::npos) << msg;
  EXPECT_NE(config_error([] { Config::parse("[oops\n"); }).find("section"), std::string::npos);
  const auto c = Config::parse("x.y = 1\n", "g.toml");
  EXPECT_NE(config_error([&] { c.require_known({"x.z"}); }).find("unknown key"), std::string::npos);
  EXPECT_FALSE(config_error([] { Config::parse("b = maybe").get_bool("b", false); }).empty());
}

TEST(RunConfig, DefaultsMatchFullScaleTraining) {
  const auto r = RunConfig::from(Config::parse(""));
  EXPECT_EQ(r.train.epochs_expand, 200);
  EXPECT_EQ(r.train.epochs_compress, 200);
  EXPECT_EQ(r.train.base_lr, 0.1);
  EXPECT_EQ(r.train.momentum, 0.9);
  EXPECT_EQ(r.train.weight_decay, 5e-4);
  EXPECT_EQ(r.train.tau, 2.0);
  EXPECT_EQ(r.train.alpha, 0.2);
  EXPECT_EQ(r.train.compress_aug, CompressAug::r_cutmix);
  EXPECT_EQ(r.train.ce_weight_in_compression, 0.0);
}

TEST(RunConfig, EchoRoundTrips) {
  auto r = RunConfig::desk();
  r.seed = 4;
  r.train.compress_aug = CompressAug::mixup;
  r.train.tau = 1.5;
  const auto back = RunConfig::from(Config::parse(r.echo()));
  EXPECT_EQ(back.echo(), r.echo());
}

TEST(RunConfig, RejectsBadValues) {
  EXPECT_FALSE(config_error([] { RunConfig::from(Config::parse("train.compress_aug = cutout")); }).empty());
  EXPECT_FALSE(config_error([] { RunConfig::from(Config::parse("train.tau = 0")); }).empty());
  EXPECT_FALSE(config_error([] { RunConfig::from(Config::parse("train.epochs = 3")); }).empty());
  EXPECT_FALSE(config_error([] { RunConfig::from(Config::parse("dataset.kind = mnist")); }).empty());
  EXPECT_FALSE(config_error([] { RunConfig::from(Config::parse("memory.mode = fifo")); }).empty());
}

TEST(TopK, HandCase) {
  const Tensor logits(Shape{3, 3}, std::vector<float>{3, 1, 0, 0, 2, 1, 1, 2, 0});
  const std::vector<int> y = {0, 1, 0};
  EXPECT_NEAR(topk_accuracy(logits, y, 1), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(topk_accuracy(logits, y, 2), 1.0);
  EXPECT_EQ(topk_accuracy(logits, y, 3), 1.0);
}

TEST(TopK, TiesFavourLowerIndex) {
  const Tensor logits(Shape{2, 3}, 1.0f);
  EXPECT_EQ(topk_hits(logits, {0, 2}, 1).hits, 1u);
  EXPECT_EQ(topk_hits(logits, {0, 2}, 2).hits, 1u);
  EXPECT_THROW(topk_accuracy(logits, {0, 1}, 4), std::invalid_argument);
  EXPECT_THROW(topk_accuracy(Tensor(Shape{0, 3}), {}, 1), std::invalid_argument);
}

TEST(Average, Values) {
  EXPECT_EQ(average_incremental_accuracy({80, 70, 60}), 70);
  EXPECT_EQ(average_incremental_accuracy({42.5}), 42.5);
  EXPECT_THROW(average_incremental_accuracy({}), std::invalid_argument);
  // A declining run averages above its last value.
  const std::vector<double> declining = {90, 85, 77.49, 70, 66.1};
  EXPECT_GT(average_incremental_accuracy(declining), declining.back());
}

TEST(Percent, TwoDecimals) {
  EXPECT_EQ(format_percent(0.66104), "66.10");
  EXPECT_EQ(rounded_percent(2.0 / 3.0), 66.67);
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}
