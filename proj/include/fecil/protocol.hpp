#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fecil/dataset.hpp"
#include "fecil/memory.hpp"

namespace fecil {

enum class Protocol { b0, b50 };

Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol p);

struct TaskSequence {
  std::vector<int> class_order;
  std::vector<std::vector<int>> tasks;
  MemoryRule memory_rule;

  /// Classes of the first `steps` tasks, in class order.
  std::vector<int> seen_classes(std::size_t steps) const;
};

/// B0: `steps` equal groups over all classes, total memory of 2000.
/// B50: a 50-class base group then `steps` equal groups over the remaining
/// 50 classes, 20 exemplars per class.
TaskSequence make_task_sequence(std::size_t num_classes, Protocol protocol, std::size_t steps, std::uint64_t seed);

enum class Provenance : std::uint8_t { fresh, memory };

/// D_new followed by every memory exemplar, each exactly once.
struct IncrementalDataset {
  Tensor images;
  std::vector<int> labels;
  std::vector<Provenance> provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t count(Provenance p) const;
};

IncrementalDataset build_incremental_dataset(const LabeledDataset& task_data, const ExemplarMemory& mem);

}  // namespace fecil
