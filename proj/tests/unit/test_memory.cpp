#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fecil/memory.hpp"
#include "herding_oracle.hpp"

using namespace fecil;
using fecil::testing::integer_herding;

namespace {

// Same greedy rule over real features in long double.
std::vector<std::size_t> real_herding(const TensorD& f, std::size_t m) {
  const std::size_t n = f.dim(0), d = f.dim(1);
  std::vector<long double> mu(d, 0), running(d, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += f.at(i, j);
  for (auto& v : mu) v /= n;
  std::vector<bool> used(n, false);
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= std::min(m, n); ++k) {
    long double best = INFINITY;
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      long double sq = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const long double diff = mu[j] - (running[j] + f.at(i, j)) / k;
        sq += diff * diff;
      }
      if (sq < best) {
        best = sq;
        arg = i;
      }
    }
    used[arg] = true;
    out.push_back(arg);
    for (std::size_t j = 0; j < d; ++j) running[j] += f.at(arg, j);
  }
  return out;
}

Exemplar make_exemplar(std::size_t id, int label, float value = 0.0f) {
  return Exemplar{id, label, Tensor(Shape{1, 2, 2}, value)};
}

}  // namespace

TEST(Herding, IdenticalPointsKeepInputOrder) {
  const TensorD f(Shape{5, 3}, 0.25);
  EXPECT_EQ(herding_select(f, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(herding_select(f, 2), (std::vector<std::size_t>{0, 1}));
}

TEST(Herding, FullSelectionIsPermutation) {
  Rng rng(1);
  std::normal_distribution<double> nd;
  TensorD f(Shape{7, 2});
  for (auto& v : f.storage()) v = nd(rng);
  auto order = herding_select(f, 7);
  std::sort(order.begin(), order.end());
  EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(herding_select(f, 20).size(), 7u);
}

TEST(Herding, MatchesExhaustiveGreedyOnTiedIntegerSets) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 8), d = 1 + uniform_index(rng, 4);
    // Few distinct values, so duplicates and symmetric ties are common.
    std::uniform_int_distribution<int> val(-2, 2);
    std::vector<std::vector<long long>> x(n, std::vector<long long>(d));
    TensorD f(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) f.at(i, j) = static_cast<double>(x[i][j] = val(rng));
    const std::size_t m = 1 + uniform_index(rng, n);
    ASSERT_EQ(herding_select(f, m), integer_herding(x, m)) << "trial " << trial;
  }
}

TEST(Herding, MatchesExhaustiveGreedyOnRealSets) {
  Rng rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 8), d = 1 + uniform_index(rng, 4);
    TensorD f(Shape{n, d});
    for (auto& v : f.storage()) v = nd(rng);
    const std::size_t m = 1 + uniform_index(rng, n);
    ASSERT_EQ(herding_select(f, m), real_herding(f, m)) << "trial " << trial;
  }
}

TEST(Herding, Errors) {
  EXPECT_THROW(herding_select(TensorD(Shape{0, 2}), 1), std::invalid_argument);
  EXPECT_THROW(herding_select(TensorD(Shape{2, 2}), 0), std::invalid_argument);
}

TEST(Quotas, TotalAndPerClass) {
  EXPECT_EQ(memory_quotas({BudgetMode::total, 2000}, 20), std::vector<std::size_t>(20, 100));
  EXPECT_EQ(memory_quotas({BudgetMode::per_class, 20}, 7), std::vector<std::size_t>(7, 20));
  EXPECT_EQ(memory_quotas({BudgetMode::total, 10}, 4), (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_THROW(memory_quotas({BudgetMode::total, 3}, 4), std::invalid_argument);
}

TEST(Memory, TruncationKeepsPrefix) {
  ExemplarMemory mem({BudgetMode::total, 100});
  std::vector<Exemplar> ex;
  for (std::size_t i = 0; i < 6; ++i) ex.push_back(make_exemplar(10 + i, 3));
  mem.put_class(3, ex);
  mem.truncate_class(3, 4);
  ASSERT_EQ(mem.exemplars(3).size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(mem.exemplars(3)[i].id, 10 + i);
  EXPECT_THROW(mem.put_class(4, {make_exemplar(0, 5)}), std::invalid_argument);
}

TEST(Memory, InvariantViolations) {
  ExemplarMemory mem({BudgetMode::total, 3});
  mem.put_class(0, {make_exemplar(0, 0), make_exemplar(1, 0)});
  mem.put_class(1, {make_exemplar(2, 1), make_exemplar(3, 1)});
  EXPECT_THROW(mem.check_invariants(), std::logic_error);
  mem.truncate_class(1, 1);
  EXPECT_NO_THROW(mem.check_invariants());
}

TEST(Memory, UpdateShrinksOldClassesToTheirPrefix) {
  const auto data = synth_gaussians(4, 12, 2, 8, 5);
  BackboneConfig c;
  c.width = 4;
  c.blocks_per_stage = 1;
  c.stages = 2;
  c.image_side = 8;
  Rng rng(4);
  FeatureExtractor e(c, rng);
  const auto norm = compute_normalization(data.train);
  ExemplarMemory mem({BudgetMode::total, 12});
  mem = update_memory(mem, data.train, {2, 0}, e, norm);
  EXPECT_EQ(mem.size(), 12u);
  EXPECT_EQ(mem.classes(), (std::vector<int>{2, 0}));
  const auto first = mem.exemplars(2);
  mem = update_memory(mem, data.train, {1, 3}, e, norm);
  EXPECT_EQ(mem.size(), 12u);
  ASSERT_EQ(mem.exemplars(2).size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(mem.exemplars(2)[i].id, first[i].id);
  for (int cls : mem.classes()) {
    for (const auto& ex : mem.exemplars(cls)) {
      EXPECT_EQ(data.train.labels[ex.id], cls);
      EXPECT_EQ(std::vector<float>(ex.image.values().begin(), ex.image.values().end()),
                std::vector<float>(data.train.image(ex.id), data.train.image(ex.id) + data.train.image_size()));
    }
  }
  EXPECT_THROW(update_memory(mem, data.train, {1}, e, norm), std::invalid_argument);
}

TEST(Memory, PerClassRule) {
  const auto data = synth_gaussians(3, 30, 2, 8, 6);
  BackboneConfig c;
  c.width = 4;
  c.blocks_per_stage = 1;
  c.stages = 2;
  c.image_side = 8;
  Rng rng(4);
  FeatureExtractor e(c, rng);
  ExemplarMemory mem({BudgetMode::per_class, 20});
  mem = update_memory(mem, data.train, {0, 1, 2}, e, compute_normalization(data.train));
  for (int cls : {0, 1, 2}) EXPECT_EQ(mem.exemplars(cls).size(), 20u);
}

TEST(MemorySampling, SingleExemplarRepeats) {
  ExemplarMemory mem({BudgetMode::total, 10});
  mem.put_class(7, {make_exemplar(42, 7)});
  Rng rng(1);
  const auto batch = sample_memory_batch(mem, 4, rng);
  ASSERT_EQ(batch.size(), 4u);
  for (const auto* e : batch) EXPECT_EQ(e->id, 42u);
}

TEST(MemorySampling, UniformOverClasses) {
  ExemplarMemory mem({BudgetMode::total, 10});
  std::vector<Exemplar> a, b;
  for (std::size_t i = 0; i < 5; ++i) {
    a.push_back(make_exemplar(i, 0));
    b.push_back(make_exemplar(5 + i, 1));
  }
  mem.put_class(0, a);
  mem.put_class(1, b);
  Rng rng(8);
  std::size_t zeros = 0;
  const auto batch = sample_memory_batch(mem, 100000, rng);
  for (const auto* e : batch) {
    ASSERT_TRUE(e->label == 0 || e->label == 1);
    zeros += e->label == 0;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / batch.size(), 0.5, 0.01);
  EXPECT_THROW(sample_memory_batch(ExemplarMemory(), 3, rng), std::invalid_argument);
}
