#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fecil/ops.hpp"
#include "fecil/rng.hpp"

namespace fecil {

enum class Mode { train, eval };

/// Residual backbone shape: a 3x3 stem, then `stages` stages of
/// `blocks_per_stage` basic blocks; stage s has width << s channels and
/// every stage after the first halves the resolution.
struct BackboneConfig {
  int in_channels = 1;
  int width = 8;
  int blocks_per_stage = 2;
  int stages = 3;
  int image_side = 16;

  std::size_t out_dim() const { return static_cast<std::size_t>(width) << (stages - 1); }
  void validate() const;
  std::string echo() const;
  static BackboneConfig parse_echo(const std::string& text);
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct BatchNormLayer {
  Var<float> gamma;
  Var<float> beta;
  ops::BatchNormStats<float> stats;
};

struct ConvBn {
  Var<float> weight;
  BatchNormLayer bn;
  int stride = 1;
  int pad = 1;
};

struct ResidualBlock {
  ConvBn first;
  ConvBn second;
  std::optional<ConvBn> shortcut;
};

using TensorVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

class FeatureExtractor {
 public:
  FeatureExtractor(const BackboneConfig& config, Rng& rng);
  FeatureExtractor(const FeatureExtractor& other);
  FeatureExtractor& operator=(const FeatureExtractor& other);
  FeatureExtractor(FeatureExtractor&&) noexcept = default;
  FeatureExtractor& operator=(FeatureExtractor&&) noexcept = default;

  /// [N, C, H, W] -> [N, out_dim]. A frozen extractor normalizes with its
  /// running statistics in every mode and never updates them.
  Var<float> forward(const Var<float>& x, Mode mode);

  const BackboneConfig& config() const { return config_; }
  std::size_t out_dim() const { return config_.out_dim(); }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);

  std::vector<Var<float>> parameters() const;
  std::size_t param_count() const;
  /// Parameters and running statistics, with stable dotted names.
  void visit_tensors(const TensorVisitor& visit);

 private:
  void for_each_var(const std::function<void(Var<float>&)>& fn);

  BackboneConfig config_;
  ConvBn stem_;
  std::vector<ResidualBlock> blocks_;
  bool frozen_ = false;
};

/// Linear head whose rows are labelled by external class ids.
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::size_t in_dim, std::vector<int> class_ids, Rng& rng);
  Classifier(Tensor weight, Tensor bias, std::vector<int> class_ids);
  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  Var<float> forward(const Var<float>& features) const;

  std::size_t in_dim() const { return weight_.shape()[1]; }
  std::size_t rows() const { return class_ids_.size(); }
  const std::vector<int>& class_ids() const { return class_ids_; }
  /// Row index of an external class id, or -1.
  int row_of(int class_id) const;

  Var<float>& weight() { return weight_; }
  Var<float>& bias() { return bias_; }
  const Var<float>& weight() const { return weight_; }
  const Var<float>& bias() const { return bias_; }
  std::vector<Var<float>> parameters() const { return {weight_, bias_}; }
  std::size_t param_count() const { return rows() == 0 ? 0 : weight_.size() + bias_.size(); }
  void set_trainable(bool on);

 private:
  void validate() const;

  Var<float> weight_;
  Var<float> bias_;
  std::vector<int> class_ids_;
};

struct CompactNetwork {
  FeatureExtractor extractor;
  Classifier head;

  Var<float> forward(const Var<float>& x, Mode mode);
  std::vector<Var<float>> parameters() const;
};

struct BigOutput {
  Var<float> logits_big;
  Var<float> logits_aux;
  Var<float> features;
};

/// Frozen previous extractor beside a trainable copy, a head over the
/// concatenated features and an auxiliary head over the new features only.
struct DynamicNetwork {
  FeatureExtractor prev;
  FeatureExtractor next;
  Classifier head_big;
  Classifier head_aux;
  std::size_t old_class_count = 0;

  std::vector<Var<float>> trainable_parameters() const;
  std::vector<int> old_class_ids() const;
  std::vector<int> new_class_ids() const;
};

BigOutput forward_big(DynamicNetwork& net, const Var<float>& x, Mode mode);

DynamicNetwork expand(const CompactNetwork& prev, const std::vector<int>& new_class_ids, Rng& rng);

/// Maps labels to auxiliary targets: 0 for every old class, k for the k-th
/// new class (1-based) in head_big row order.
std::vector<int> aux_targets(const std::vector<int>& labels, const std::vector<int>& class_ids,
                             std::size_t old_class_count);

/// Scales new-class weight rows by mean old-row norm / mean new-row norm.
Classifier weight_align(const Classifier& head, const std::vector<int>& old_ids, const std::vector<int>& new_ids);

/// Mean L2 norm of the weight rows for the given class ids.
double mean_row_norm(const Classifier& head, const std::vector<int>& ids);

CompactNetwork compress_init(const CompactNetwork& prev, const std::vector<int>& new_class_ids, Rng& rng);

std::size_t param_count(const FeatureExtractor& e);
std::size_t param_count(const Classifier& h);
std::size_t param_count(const CompactNetwork& net);
std::size_t param_count(const DynamicNetwork& net);

}  // namespace fecil
