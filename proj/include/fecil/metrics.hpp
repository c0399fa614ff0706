#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fecil/tensor.hpp"

namespace fecil {

struct Accuracy {
  std::size_t hits = 0;
  std::size_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
};

/// A sample counts when fewer than k classes outrank its true class; equal
/// logits rank the lower class index first. `targets` are column indices.
Accuracy topk_hits(const Tensor& logits, const std::vector<int>& targets, std::size_t k);

/// Fraction in [0, 1].
double topk_accuracy(const Tensor& logits, const std::vector<int>& targets, std::size_t k);

double average_incremental_accuracy(const std::vector<double>& per_step);

/// Percent with two decimals, as the tables print it.
std::string format_percent(double fraction);

/// The numeric value of `format_percent`, so summaries and CSVs agree.
double rounded_percent(double fraction);

double median(std::vector<double> values);

}  // namespace fecil
