#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fecil/ablation.hpp"
#include "fecil/loss.hpp"
#include "fecil/trainer.hpp"
#include "tiny_config.hpp"

using namespace fecil;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("fecil_trainer_" + tag);
  fs::remove_all(p);
  return p;
}

std::vector<Tensor> snapshot(FeatureExtractor& e) {
  std::vector<Tensor> out;
  e.visit_tensors([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

struct Fixture {
  RunConfig cfg = tiny_config();
  std::shared_ptr<const DataBundle> data = std::make_shared<const DataBundle>(load_data(cfg.dataset));
};

}  // namespace

TEST(Trainer, ReportsCoverSeenClasses) {
  Fixture f;
  IncrementalRunner runner(f.cfg, f.data);
  while (!runner.done()) runner.run_step();
  const auto& reports = runner.reports();
  ASSERT_EQ(reports.size(), 2u);
  for (std::size_t t = 0; t < reports.size(); ++t) {
    const auto& r = reports[t];
    EXPECT_EQ(r.step, t + 1);
    EXPECT_EQ(r.seen_classes, runner.sequence().seen_classes(t + 1));
    EXPECT_EQ(r.top1_compact.total, 10 * r.seen_classes.size());
    EXPECT_EQ(r.params_compact_extractor, reports[0].params_compact_extractor);
    EXPECT_EQ(r.memory_size, 8u);
    const std::size_t expect_epochs = t == 0 ? 4 : 8;
    ASSERT_EQ(r.epochs.size(), expect_epochs);
    for (const auto& e : r.epochs) {
      EXPECT_TRUE(std::isfinite(e.loss));
      EXPECT_GT(e.seconds, 0.0);
    }
  }
  EXPECT_EQ(reports[0].top1_big.hits, reports[0].top1_compact.hits);
  EXPECT_GT(reports[1].params_big, reports[1].params_compact);
  EXPECT_EQ(runner.model().head.rows(), 4u);
}

TEST(Trainer, ExpansionFreezesPreviousExtractorAndAligns) {
  Fixture f;
  IncrementalRunner runner(f.cfg, f.data);
  runner.run_step();
  const auto& classes = runner.sequence().tasks[1];
  Rng rng(1);
  auto big = expand(runner.model(), classes, rng);
  const auto before = snapshot(big.prev);
  const auto task = f.data->train.filter_classes(classes);
  const auto inc = build_incremental_dataset(task, runner.memory());
  train_expansion(big, inc, runner.normalization(), runner.config(), 2);
  EXPECT_EQ(snapshot(big.prev), before);
  EXPECT_EQ(big.head_aux.rows(), 0u);
  EXPECT_NEAR(mean_row_norm(big.head_big, big.new_class_ids()), mean_row_norm(big.head_big, big.old_class_ids()), 1e-6);

  // Teacher untouched by compression; student head aligned.
  const auto teacher_before = snapshot(big.next);
  const Tensor head_before = big.head_big.weight().value();
  Rng rng2(2);
  auto student = compress_init(runner.model(), classes, rng2);
  train_compression(big, student, inc, runner.memory(), runner.normalization(), runner.config(), 2);
  EXPECT_EQ(snapshot(big.next), teacher_before);
  EXPECT_EQ(big.head_big.weight().value(), head_before);
  EXPECT_NEAR(mean_row_norm(student.head, big.new_class_ids()), mean_row_norm(student.head, big.old_class_ids()), 1e-6);
}

TEST(Trainer, AuxLossOnOldClassesTargetsIndexZero) {
  Rng rng(3);
  std::normal_distribution<float> n;
  Tensor logits(Shape{4, 3});
  for (auto& v : logits.storage()) v = n(rng);
  const std::vector<int> ids = {5, 1, 7, 2, 9};
  const auto aux = aux_targets({1, 5, 7, 1}, ids, 3);
  EXPECT_EQ(aux, (std::vector<int>{0, 0, 0, 0}));
  const Tensor zeros = one_hot<float>({0, 0, 0, 0}, 3);
  EXPECT_EQ(softmax_cross_entropy(Var<float>(logits), one_hot<float>(aux, 3)).value()[0],
            softmax_cross_entropy(Var<float>(logits), zeros).value()[0]);
}

TEST(Trainer, ForkedRunnerMatchesStraightRun) {
  Fixture f;
  IncrementalRunner straight(f.cfg, f.data);
  while (!straight.done()) straight.run_step();

  auto other = f.cfg;
  other.train.compress_aug = CompressAug::none;
  IncrementalRunner shared(other, f.data);
  shared.run_step();
  shared.expansion_phase();
  IncrementalRunner fork = shared;
  fork.config().train.compress_aug = CompressAug::r_cutmix;
  fork.compression_phase();
  ASSERT_TRUE(fork.done());
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(fork.reports()[t].top1_compact.hits, straight.reports()[t].top1_compact.hits);
    EXPECT_EQ(fork.reports()[t].top1_big.hits, straight.reports()[t].top1_big.hits);
    ASSERT_EQ(fork.reports()[t].epochs.size(), straight.reports()[t].epochs.size());
    for (std::size_t e = 0; e < fork.reports()[t].epochs.size(); ++e)
      EXPECT_EQ(fork.reports()[t].epochs[e].loss, straight.reports()[t].epochs[e].loss);
  }
  const auto a = to_container(fork.model(), fork.normalization());
  const auto b = to_container(straight.model(), straight.normalization());
  EXPECT_EQ(encode_container(a), encode_container(b));
}

TEST(Trainer, OutputsAreDeterministicAndConsistent) {
  const auto cfg = tiny_config();
  const auto d1 = temp_dir("det1"), d2 = temp_dir("det2");
  const auto r1 = run_incremental(cfg, d1);
  run_incremental(cfg, d2);
  for (const char* name : {"metrics.csv", "summary.json", "ckpt_step1", "ckpt_step2", "memory_step2.json"}) {
    ASSERT_TRUE(fs::exists(d1 / name)) << name;
    EXPECT_EQ(slurp(d1 / name), slurp(d2 / name)) << name;
  }
  // summary.json agrees with metrics.csv.
  const auto j = nlohmann::json::parse(slurp(d1 / "summary.json"));
  std::istringstream csv(slurp(d1 / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,phase,epoch,loss,lr,top1_big,top5_big,top1_compact,top5_compact,epoch_time_s");
  std::vector<double> top1;
  while (std::getline(csv, line)) {
    if (line.find(",eval,") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    top1.push_back(std::stod(cells[7]));
  }
  ASSERT_EQ(top1.size(), 2u);
  EXPECT_EQ(j["top1_compact"].get<std::vector<double>>(), top1);
  EXPECT_NEAR(j["avg_compact"].get<double>(), (top1[0] + top1[1]) / 2, 1e-9);
  EXPECT_EQ(j["last_compact"].get<double>(), top1.back());
  EXPECT_EQ(r1.summary.top1_compact, top1);

  // The written checkpoint reproduces the in-run accuracy.
  auto ck = load_model(d1 / "ckpt_step2");
  const auto data = load_data(cfg.dataset);
  const auto res = evaluate_compact(ck.net, data.test, ck.norm);
  EXPECT_EQ(res.top1.hits, r1.reports.back().top1_compact.hits);
  EXPECT_EQ(res.top1.total, r1.reports.back().top1_compact.total);
  const auto container = read_container(d1 / "ckpt_step2");
  for (const auto& [name, t] : container.tensors) EXPECT_EQ(name.find("aux"), std::string::npos) << name;
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Trainer, WallTimeColumnIsOptIn) {
  auto cfg = tiny_config();
  cfg.steps = 1;
  cfg.dataset.synth_classes = 2;
  cfg.wall_time_in_metrics = true;
  const auto d = temp_dir("wall");
  run_incremental(cfg, d);
  std::istringstream csv(slurp(d / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  EXPECT_NE(line.back(), ',');
  fs::remove_all(d);
}

TEST(Trainer, EpochTiming) {
  Fixture f;
  IncrementalRunner runner(f.cfg, f.data);
  while (!runner.done()) runner.run_step();
  EXPECT_EQ(measure_epoch_time(Phase::compress, runner.reports(), runner.reports()), 1.0);
  EXPECT_GT(median_epoch_seconds(runner.reports(), Phase::expand), 0.0);
  // Four epochs in one step leave three after warm-up; a single epoch does not.
  EXPECT_NO_THROW(median_epoch_seconds(runner.reports(), Phase::compress, 2));
  auto short_cfg = f.cfg;
  short_cfg.train.epochs_compress = 2;
  IncrementalRunner brief(short_cfg, f.data);
  while (!brief.done()) brief.run_step();
  EXPECT_THROW(median_epoch_seconds(brief.reports(), Phase::compress), std::invalid_argument);
}

TEST(Trainer, AblationSharesPrefixAndTabulates) {
  auto cfg = tiny_config();
  cfg.train.epochs_expand = 3;
  cfg.train.epochs_compress = 4;
  const auto r = run_ablation(cfg, {0, 1}, all_compress_augs());
  ASSERT_EQ(r.cells.size(), 10u);
  for (auto seed : r.seeds) {
    const auto& base = r.at(seed, CompressAug::none).reports;
    for (auto m : r.modes) {
      const auto& rep = r.at(seed, m).reports;
      EXPECT_EQ(rep[0].top1_compact.hits, base[0].top1_compact.hits);
      EXPECT_EQ(rep[1].epochs[0].loss, base[1].epochs[0].loss);  // shared expansion
    }
  }
  const std::string table = ablation_table(r);
  std::istringstream is(table);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "seed,none_avg,none_last,mixup_avg,mixup_last,cutmix_avg,cutmix_last,r_mixup_avg,r_mixup_last,"
                    "r_cutmix_avg,r_cutmix_last");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(r.time_ratio(CompressAug::none), 1.0);
}

TEST(Trainer, RejectsBadSetups) {
  Fixture f;
  auto bad = f.cfg;
  bad.steps = 3;
  EXPECT_THROW(IncrementalRunner(bad, f.data), std::invalid_argument);
  IncrementalRunner runner(f.cfg, f.data);
  EXPECT_THROW(runner.compression_phase(), std::logic_error);
  runner.expansion_phase();
  EXPECT_THROW(runner.expansion_phase(), std::logic_error);
}

// Desk-scale checks. Slower: about a minute together.
TEST(TrainerDesk, FirstTaskReachesHighAccuracy) {
  auto cfg = RunConfig::desk();
  cfg.steps = 5;
  auto data = std::make_shared<const DataBundle>(load_data(cfg.dataset));
  IncrementalRunner runner(cfg, data);
  runner.run_step();
  const auto& r = runner.reports()[0];
  ASSERT_EQ(r.seen_classes.size(), 2u);
  EXPECT_GE(r.top1_compact.value(), 0.95) << r.top1_compact.hits << "/" << r.top1_compact.total;

  // The expanded model beats the previous one on the test set extended with the
  // new classes. The previous head cannot emit new classes, so its accuracy there
  // is its old-class hits over the larger total.
  runner.run_step();
  const auto& r2 = runner.reports()[1];
  const double prev_on_extended =
      static_cast<double>(r.top1_compact.hits) / static_cast<double>(r2.top1_big.total);
  EXPECT_GT(r2.top1_big.value(), prev_on_extended);
}
