#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fecil/trainer.hpp"

namespace fecil {

struct AblationCell {
  std::uint64_t seed = 0;
  CompressAug aug = CompressAug::none;
  std::vector<StepReport> reports;
  RunSummary summary;
};

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<CompressAug> modes;
  std::vector<AblationCell> cells;  // seed-major, modes in the given order

  const AblationCell& at(std::uint64_t seed, CompressAug aug) const;
  /// Mean over seeds of a per-cell value.
  double seed_mean(CompressAug aug, const std::function<double(const AblationCell&)>& value) const;
  /// Median compression epoch time of `aug` over that of `none`, per seed,
  /// then the median over seeds. `step` = 0 pools all steps.
  double time_ratio(CompressAug aug, std::size_t step = 0) const;
};

const std::vector<CompressAug>& all_compress_augs();

using Progress = std::function<void(const std::string&)>;

/// Every mode for every seed. Within a seed the modes share the first step
/// and the second step's expansion, which do not depend on the mode.
AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            const std::vector<CompressAug>& modes, const Progress& progress = {});

/// Long form: one row per (seed, mode).
std::string ablation_csv(const AblationResult& r);
/// One row per seed plus a mean row, Avg and Last per mode.
std::string ablation_table(const AblationResult& r);

void write_ablation(const AblationResult& r, const std::filesystem::path& out_dir);

}  // namespace fecil
