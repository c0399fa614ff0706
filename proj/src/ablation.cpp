#include "fecil/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fecil {

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

const std::vector<CompressAug>& all_compress_augs() {
  static const std::vector<CompressAug> modes = {CompressAug::none, CompressAug::mixup, CompressAug::cutmix,
                                                 CompressAug::r_mixup, CompressAug::r_cutmix};
  return modes;
}

const AblationCell& AblationResult::at(std::uint64_t seed, CompressAug aug) const {
  for (const auto& c : cells) {
    if (c.seed == seed && c.aug == aug) return c;
  }
  throw std::out_of_range("ablation: no cell for seed " + std::to_string(seed) + " / " + to_string(aug));
}

double AblationResult::seed_mean(CompressAug aug, const std::function<double(const AblationCell&)>& value) const {
  if (seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  double s = 0;
  for (auto seed : seeds) s += value(at(seed, aug));
  return s / static_cast<double>(seeds.size());
}

double AblationResult::time_ratio(CompressAug aug, std::size_t step) const {
  std::vector<double> ratios;
  for (auto seed : seeds) {
    const double base = median_epoch_seconds(at(seed, CompressAug::none).reports, Phase::compress, step);
    ratios.push_back(median_epoch_seconds(at(seed, aug).reports, Phase::compress, step) / base);
  }
  return median(std::move(ratios));
}

AblationResult run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                            const std::vector<CompressAug>& modes, const Progress& progress) {
  if (seeds.empty() || modes.empty()) throw std::invalid_argument("ablation: need at least one seed and one mode");
  auto data = std::make_shared<const DataBundle>(load_data(base.dataset));
  AblationResult out;
  out.seeds = seeds;
  out.modes = modes;
  for (auto seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    IncrementalRunner shared(cfg, data);
    shared.run_step();
    if (!shared.done()) shared.expansion_phase();
    if (progress) progress("seed " + std::to_string(seed) + ": shared prefix done");
    std::vector<IncrementalRunner> runs(modes.size(), shared);
    for (std::size_t i = 0; i < modes.size(); ++i) runs[i].config().train.compress_aug = modes[i];
    // Modes advance phase by phase in lockstep, so the compression epochs compared
    // for one step run minutes apart at most and host load drift mostly cancels.
    while (!runs.front().done()) {
      for (auto& run : runs) {
        if (!run.mid_step()) run.expansion_phase();
      }
      for (auto& run : runs) run.compression_phase();
    }
    for (std::size_t i = 0; i < modes.size(); ++i) {
      AblationCell cell{seed, modes[i], runs[i].reports(), summarize(runs[i].reports(), seed, modes[i])};
      if (progress) {
        progress("seed " + std::to_string(seed) + " " + to_string(modes[i]) + ": avg " + pct(cell.summary.avg_compact) +
                 " last " + pct(cell.summary.last_compact));
      }
      out.cells.push_back(std::move(cell));
    }
  }
  return out;
}

std::string ablation_csv(const AblationResult& r) {
  const bool timed = std::find(r.modes.begin(), r.modes.end(), CompressAug::none) != r.modes.end();
  std::ostringstream os;
  os << "seed,compress_aug,avg_compact,last_compact,avg_big,last_big,compress_epoch_s,time_vs_none\n";
  for (const auto& c : r.cells) {
    const double secs = median_epoch_seconds(c.reports, Phase::compress);
    os << c.seed << ',' << to_string(c.aug) << ',' << pct(c.summary.avg_compact) << ',' << pct(c.summary.last_compact)
       << ',' << pct(c.summary.avg_big) << ',' << pct(c.summary.last_big) << ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", secs);
    os << buf << ',';
    if (timed) {
      const double base = median_epoch_seconds(r.at(c.seed, CompressAug::none).reports, Phase::compress);
      std::snprintf(buf, sizeof buf, "%.2f", secs / base);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << "seed";
  for (auto m : r.modes) os << ',' << to_string(m) << "_avg," << to_string(m) << "_last";
  os << '\n';
  for (auto seed : r.seeds) {
    os << seed;
    for (auto m : r.modes) {
      const auto& s = r.at(seed, m).summary;
      os << ',' << pct(s.avg_compact) << ',' << pct(s.last_compact);
    }
    os << '\n';
  }
  os << "mean";
  for (auto m : r.modes) {
    os << ',' << pct(r.seed_mean(m, [](const AblationCell& c) { return c.summary.avg_compact; })) << ','
       << pct(r.seed_mean(m, [](const AblationCell& c) { return c.summary.last_compact; }));
  }
  os << '\n';
  return os.str();
}

void write_ablation(const AblationResult& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream os(out_dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (out_dir / name).string());
    os << text;
  };
  put("ablation.csv", ablation_csv(r));
  put("ablation_table.csv", ablation_table(r));
}

}  // namespace fecil
