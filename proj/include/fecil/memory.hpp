#pragma once

#include <map>
#include <vector>

#include "fecil/backbone.hpp"
#include "fecil/dataset.hpp"
#include "fecil/rng.hpp"

namespace fecil {

enum class BudgetMode { total, per_class };

struct MemoryRule {
  BudgetMode mode = BudgetMode::total;
  std::size_t amount = 2000;
};

struct Exemplar {
  std::size_t id = 0;  // index in the source training set
  int label = 0;
  Tensor image;        // [C, H, W], raw [0, 1] values
};

/// Rehearsal store. Classes keep insertion order; exemplars within a class
/// keep herding order, so any prefix is itself a herding selection.
class ExemplarMemory {
 public:
  explicit ExemplarMemory(MemoryRule rule = {}) : rule_(rule) {}

  const MemoryRule& rule() const { return rule_; }
  const std::vector<int>& classes() const { return class_order_; }
  bool contains(int class_id) const { return store_.count(class_id) > 0; }
  const std::vector<Exemplar>& exemplars(int class_id) const { return store_.at(class_id); }
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  /// All exemplars in class order, then herding order.
  std::vector<const Exemplar*> flat() const;

  void put_class(int class_id, std::vector<Exemplar> exemplars);
  void truncate_class(int class_id, std::size_t keep);

  /// Throws std::logic_error when budget or balance rules are broken.
  void check_invariants() const;

 private:
  MemoryRule rule_;
  std::vector<int> class_order_;
  std::map<int, std::vector<Exemplar>> store_;
};

/// Greedy herding order over rows of `features` [n, d]: repeatedly add the
/// row that keeps the running mean of the selection closest to the full mean.
/// Ties go to the lowest index.
std::vector<std::size_t> herding_select(const TensorD& features, std::size_t m);

/// Per-class quotas in class order for `class_count` classes.
std::vector<std::size_t> memory_quotas(const MemoryRule& rule, std::size_t class_count);

/// Shrinks stored classes to their new quota and adds `new_class_ids`
/// chosen by herding on L2-normalized extractor features.
ExemplarMemory update_memory(const ExemplarMemory& mem, const LabeledDataset& train,
                             const std::vector<int>& new_class_ids, FeatureExtractor& extractor,
                             const Normalization& norm);

/// `count` independent uniform draws, with replacement, over every exemplar.
std::vector<const Exemplar*> sample_memory_batch(const ExemplarMemory& mem, std::size_t count, Rng& rng);

/// Features [n, out_dim] in eval mode without recording a graph.
Tensor extract_features(FeatureExtractor& extractor, const Tensor& raw_images, const Normalization& norm,
                        std::size_t batch = 256);

}  // namespace fecil
