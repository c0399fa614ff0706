#include "fecil/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace fecil {

Accuracy topk_hits(const Tensor& logits, const std::vector<int>& targets, std::size_t k) {
  if (logits.rank() != 2 || logits.shape()[0] != targets.size()) {
    throw ShapeError("topk: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw std::invalid_argument("topk: empty evaluation set");
  const std::size_t c = logits.shape()[1];
  if (k == 0 || k > c) throw std::invalid_argument("topk: k must be in [1, " + std::to_string(c) + "]");
  Accuracy acc{0, targets.size()};
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw std::out_of_range("topk: target outside logits");
    const float ly = logits.at(i, static_cast<std::size_t>(y));
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const float lj = logits.at(i, j);
      if (lj > ly || (lj == ly && j < static_cast<std::size_t>(y))) ++ahead;
    }
    if (ahead < k) ++acc.hits;
  }
  return acc;
}

double topk_accuracy(const Tensor& logits, const std::vector<int>& targets, std::size_t k) {
  return topk_hits(logits, targets, k).value();
}

double average_incremental_accuracy(const std::vector<double>& per_step) {
  if (per_step.empty()) throw std::invalid_argument("average incremental accuracy of an empty run");
  return std::accumulate(per_step.begin(), per_step.end(), 0.0) / static_cast<double>(per_step.size());
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

double rounded_percent(double fraction) { return std::stod(format_percent(fraction)); }

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace fecil
