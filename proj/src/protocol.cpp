#include "fecil/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fecil/rng.hpp"

namespace fecil {

Protocol parse_protocol(const std::string& name) {
  if (name == "B0" || name == "b0") return Protocol::b0;
  if (name == "B50" || name == "b50") return Protocol::b50;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected B0 or B50)");
}

std::string to_string(Protocol p) { return p == Protocol::b0 ? "B0" : "B50"; }

std::vector<int> TaskSequence::seen_classes(std::size_t steps) const {
  std::vector<int> out;
  for (std::size_t t = 0; t < std::min(steps, tasks.size()); ++t) out.insert(out.end(), tasks[t].begin(), tasks[t].end());
  return out;
}

TaskSequence make_task_sequence(std::size_t num_classes, Protocol protocol, std::size_t steps, std::uint64_t seed) {
  if (steps == 0) throw std::invalid_argument("task sequence: steps must be >= 1");
  TaskSequence seq;
  seq.class_order.resize(num_classes);
  std::iota(seq.class_order.begin(), seq.class_order.end(), 0);
  Rng rng = substream(seed, {0x0c1a55});
  std::shuffle(seq.class_order.begin(), seq.class_order.end(), rng);

  std::vector<std::size_t> sizes;
  if (protocol == Protocol::b0) {
    if (num_classes == 0 || num_classes % steps != 0) {
      throw std::invalid_argument("B0: " + std::to_string(num_classes) + " classes cannot be split equally into " +
                                  std::to_string(steps) + " steps");
    }
    sizes.assign(steps, num_classes / steps);
    seq.memory_rule = MemoryRule{BudgetMode::total, 2000};
  } else {
    if (num_classes != 100) throw std::invalid_argument("B50 requires 100 classes, got " + std::to_string(num_classes));
    if (50 % steps != 0) {
      throw std::invalid_argument("B50: the remaining 50 classes cannot be split equally into " +
                                  std::to_string(steps) + " steps");
    }
    sizes.push_back(50);
    sizes.insert(sizes.end(), steps, 50 / steps);
    seq.memory_rule = MemoryRule{BudgetMode::per_class, 20};
  }
  std::size_t offset = 0;
  for (std::size_t s : sizes) {
    seq.tasks.emplace_back(seq.class_order.begin() + static_cast<std::ptrdiff_t>(offset),
                           seq.class_order.begin() + static_cast<std::ptrdiff_t>(offset + s));
    offset += s;
  }
  return seq;
}

std::size_t IncrementalDataset::count(Provenance p) const {
  return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), p));
}

IncrementalDataset build_incremental_dataset(const LabeledDataset& task_data, const ExemplarMemory& mem) {
  for (int y : task_data.labels) {
    if (mem.contains(y)) {
      throw std::invalid_argument("incremental dataset: class " + std::to_string(y) + " is both new and in memory");
    }
  }
  const auto stored = mem.flat();
  const std::size_t n = task_data.size() + stored.size();
  const std::size_t per = task_data.image_size();
  IncrementalDataset d;
  d.images = Tensor(Shape{n, task_data.channels(), task_data.height(), task_data.width()});
  d.labels.reserve(n);
  d.provenance.reserve(n);
  std::copy_n(task_data.images.data(), task_data.size() * per, d.images.data());
  d.labels = task_data.labels;
  d.provenance.assign(task_data.size(), Provenance::fresh);
  for (std::size_t k = 0; k < stored.size(); ++k) {
    if (stored[k]->image.size() != per) throw ShapeError("incremental dataset: exemplar shape differs from task data");
    std::copy_n(stored[k]->image.data(), per, d.images.data() + (task_data.size() + k) * per);
    d.labels.push_back(stored[k]->label);
    d.provenance.push_back(Provenance::memory);
  }
  return d;
}

}  // namespace fecil
