#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fecil/backbone.hpp"
#include "fecil/checkpoint.hpp"
#include "fecil/config.hpp"
#include "fecil/memory.hpp"
#include "fecil/metrics.hpp"
#include "fecil/mixaug.hpp"
#include "fecil/protocol.hpp"

namespace fecil {

struct TrainConfig {
  int epochs_expand = 200;
  int epochs_compress = 200;
  double base_lr = 0.1;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double tau = 2.0;
  double alpha = 0.2;
  CompressAug compress_aug = CompressAug::r_cutmix;
  double ce_weight_in_compression = 0.0;
  int crop_pad = 2;
  bool flip = false;

  void validate() const;
};

struct DatasetConfig {
  std::string kind = "synth";  // synth | idx | cifar100
  std::string path;
  std::uint64_t seed = 0;
  std::size_t synth_classes = 10;
  std::size_t synth_train_per_class = 200;
  std::size_t synth_test_per_class = 50;
  std::size_t synth_side = 16;
};

struct RunConfig {
  DatasetConfig dataset;
  Protocol protocol = Protocol::b0;
  std::size_t steps = 5;
  std::optional<MemoryRule> memory;  // overrides the protocol's rule
  BackboneConfig backbone;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0};
  bool wall_time_in_metrics = false;

  /// Synthetic 10 classes, 5 B0 steps, memory 100, 60 + 60 epochs.
  static RunConfig desk();
  static RunConfig from(const Config& config);
  /// Round-trippable key=value text.
  std::string echo() const;
};

struct DataBundle {
  LabeledDataset train;
  LabeledDataset test;
  std::size_t num_classes = 0;
};

DataBundle load_data(const DatasetConfig& config);

enum class Phase { bootstrap, expand, compress };
std::string to_string(Phase p);

struct EpochRecord {
  Phase phase;
  int epoch;
  double loss;
  double lr;
  double seconds;
};

struct StepReport {
  std::size_t step = 0;  // 1-based
  std::vector<EpochRecord> epochs;
  Accuracy top1_big, top5_big, top1_compact, top5_compact;
  std::size_t params_big = 0;
  std::size_t params_compact = 0;
  std::size_t params_compact_extractor = 0;
  std::size_t memory_size = 0;
  std::vector<int> seen_classes;
};

using BatchLoss = std::function<void(double)>;

/// Compact model for the first task, plain cross-entropy.
CompactNetwork train_first_task(const LabeledDataset& data, const std::vector<int>& classes, const Normalization& norm,
                                const RunConfig& config, std::size_t step, std::vector<EpochRecord>* log = nullptr);

/// Cross-entropy on the big head plus cross-entropy on the auxiliary head,
/// then weight alignment; the auxiliary head is dropped on return. The head as
/// trained, before alignment, is copied to `unaligned` when given.
void train_expansion(DynamicNetwork& net, const IncrementalDataset& data, const Normalization& norm,
                     const RunConfig& config, std::size_t step, std::vector<EpochRecord>* log = nullptr,
                     Classifier* unaligned = nullptr);

/// Distils the frozen big model into `student` on augmented inputs, then
/// aligns the student head.
void train_compression(DynamicNetwork& big, CompactNetwork& student, const IncrementalDataset& data,
                       const ExemplarMemory& mem, const Normalization& norm, const RunConfig& config, std::size_t step,
                       std::vector<EpochRecord>* log = nullptr);

/// Logits of the big model over head_big, eval mode, no graph.
Tensor big_logits(DynamicNetwork& net, const Tensor& raw_images, const Normalization& norm);
Tensor compact_logits(CompactNetwork& net, const Tensor& raw_images, const Normalization& norm);

struct EvalResult {
  Accuracy top1, top5;
};

/// Accuracy over `test` samples of classes the logits' head knows.
EvalResult evaluate_logits(const Tensor& logits, const std::vector<int>& labels, const std::vector<int>& class_ids);
EvalResult evaluate_compact(CompactNetwork& net, const LabeledDataset& test, const Normalization& norm);

/// Drives one run step by step. Copyable, so a run can be forked after any
/// phase; every random stream is derived from (seed, step, phase, epoch,
/// batch), so a fork continues exactly as an unforked run would.
class IncrementalRunner {
 public:
  IncrementalRunner(RunConfig config, std::shared_ptr<const DataBundle> data);

  std::size_t steps() const { return sequence_.tasks.size(); }
  /// 1-based index of the next step to run.
  std::size_t next_step() const { return reports_.size() + 1; }
  bool done() const { return reports_.size() == steps(); }
  bool mid_step() const { return mid_step_; }

  /// Runs the first half of the next step (bootstrap, or expansion and WA).
  void expansion_phase();
  /// Completes the step: compression, WA, memory update and evaluation.
  void compression_phase();
  void run_step();

  RunConfig& config() { return config_; }
  const RunConfig& config() const { return config_; }
  const TaskSequence& sequence() const { return sequence_; }
  const std::vector<StepReport>& reports() const { return reports_; }
  CompactNetwork& model() { return *model_; }
  const ExemplarMemory& memory() const { return memory_; }
  const Normalization& normalization() const { return norm_; }
  const DataBundle& data() const { return *data_; }

 private:
  RunConfig config_;
  std::shared_ptr<const DataBundle> data_;
  TaskSequence sequence_;
  Normalization norm_;
  ExemplarMemory memory_;
  std::optional<CompactNetwork> model_;
  std::optional<DynamicNetwork> big_;
  std::optional<IncrementalDataset> current_;
  StepReport pending_;
  bool mid_step_ = false;
  std::vector<StepReport> reports_;
};

struct RunSummary {
  std::uint64_t seed = 0;
  std::string compress_aug;
  std::vector<double> top1_big, top5_big, top1_compact, top5_compact;  // percent, 2 decimals
  double avg_big = 0, avg_compact = 0, last_big = 0, last_compact = 0;
  std::vector<std::size_t> params_big, params_compact, params_compact_extractor;
  double expand_epoch_seconds = 0, compress_epoch_seconds = 0;
};

RunSummary summarize(const std::vector<StepReport>& reports, std::uint64_t seed, CompressAug aug);

/// Median wall time of a phase's epochs, skipping the first epoch of each
/// step. `step` = 0 pools every step.
double median_epoch_seconds(const std::vector<StepReport>& reports, Phase phase, std::size_t step = 0);

/// Median epoch time of `run` over that of `baseline` for the same phase.
double measure_epoch_time(Phase phase, const std::vector<StepReport>& run, const std::vector<StepReport>& baseline);

struct RunResult {
  std::vector<StepReport> reports;
  RunSummary summary;
};

/// Full pipeline for `config.seed`. With a non-empty `out_dir`, writes
/// metrics.csv, timing.csv, summary.json and per-step checkpoints and
/// memory snapshots.
RunResult run_incremental(const RunConfig& config, const std::filesystem::path& out_dir = {});

}  // namespace fecil
