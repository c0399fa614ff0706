#include "fecil/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "fecil/ablation.hpp"
#include "fecil/checkpoint.hpp"
#include "fecil/gradcheck.hpp"
#include "fecil/trainer.hpp"

namespace fecil {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Config load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  Config c = path.empty() ? Config::parse("", "<defaults>") : Config::load(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

// Dataset keys of a checkpoint's config echo.
Config dataset_from_echo(const std::string& echo) {
  std::istringstream is(echo);
  std::string line, kept;
  while (std::getline(is, line)) {
    if (line.rfind("dataset.", 0) == 0) kept += line + "\n";
  }
  return Config::parse(kept, "<checkpoint echo>");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_dir,
            std::ostream& out) {
  const RunConfig rc = RunConfig::from(load_with_overrides(config_path, sets));
  const auto result = run_incremental(rc, out_dir);
  for (const auto& r : result.reports) {
    out << "step " << r.step << ": big top1 " << format_percent(r.top1_big.value()) << " top5 "
        << format_percent(r.top5_big.value()) << " | compact top1 " << format_percent(r.top1_compact.value())
        << " top5 " << format_percent(r.top5_compact.value()) << "\n";
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "avg %.2f last %.2f (compact), avg %.2f last %.2f (big)\n",
                result.summary.avg_compact, result.summary.last_compact, result.summary.avg_big,
                result.summary.last_big);
  out << buf;
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path, const std::vector<std::string>& sets,
             std::ostream& out) {
  ModelCheckpoint ck = load_model(ckpt_path);
  Config c = config_path.empty() && sets.empty() ? dataset_from_echo(ck.echo) : load_with_overrides(config_path, sets);
  const RunConfig rc = RunConfig::from(c);
  const DataBundle data = load_data(rc.dataset);
  const auto res = evaluate_compact(ck.net, data.test, ck.norm);
  out << "classes " << ck.net.head.rows() << " samples " << res.top1.total << "\n"
      << "top1 " << format_percent(res.top1.value()) << "\n"
      << "top5 " << format_percent(res.top5.value()) << "\n";
  return 0;
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed, bool verbose, std::ostream& out) {
  const auto report = run_gradcheck(trials, seed);
  std::map<std::string, std::pair<double, std::size_t>> per_op;
  for (const auto& c : report.cases) {
    auto& [worst, n] = per_op[c.name];
    worst = std::max(worst, c.max_rel_error);
    ++n;
    if (verbose) out << c.name << " trial " << c.trial << " rel " << c.max_rel_error << "\n";
  }
  for (const auto& [name, v] : per_op) {
    out << (v.first < report.tolerance ? "ok   " : "FAIL ") << name << " cases " << v.second << " worst "
        << v.first << "\n";
  }
  out << report.cases.size() << " cases, worst relative error " << report.worst() << " (tolerance "
      << report.tolerance << ")\n";
  return report.passed() ? 0 : 1;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets, std::size_t seed_count,
               const std::vector<std::string>& mode_names, const std::string& out_dir, std::ostream& out,
               std::ostream& err) {
  const RunConfig rc = RunConfig::from(load_with_overrides(config_path, sets));
  std::vector<std::uint64_t> seeds = rc.seeds;
  if (seed_count > 0) {
    seeds.clear();
    for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(i);
  }
  std::vector<CompressAug> modes;
  if (mode_names.empty()) {
    modes = all_compress_augs();
  } else {
    for (const auto& m : mode_names) {
      try {
        modes.push_back(parse_compress_aug(m));
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
    }
  }
  const auto result = run_ablation(rc, seeds, modes, [&err](const std::string& msg) { err << msg << std::endl; });
  if (!out_dir.empty()) write_ablation(result, out_dir);
  out << ablation_table(result);
  return 0;
}

int cmd_plotdata(const std::string& metrics_path, const std::string& out_path, std::ostream& out) {
  std::ifstream is(metrics_path);
  if (!is) throw std::runtime_error("cannot open " + metrics_path);
  std::string line;
  if (!std::getline(is, line)) throw FormatError(metrics_path + ": empty file");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"step", "phase", "top1_big", "top5_big", "top1_compact", "top5_compact"}) {
    if (!col.count(need)) throw FormatError(metrics_path + ": missing column '" + need + "'");
  }
  std::ostringstream os;
  os << "step,top1_big,top5_big,top1_compact,top5_compact\n";
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(metrics_path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " fields, got " + std::to_string(cells.size()));
    }
    if (cells[col["phase"]] != "eval") continue;
    os << cells[col["step"]] << ',' << cells[col["top1_big"]] << ',' << cells[col["top5_big"]] << ','
       << cells[col["top1_compact"]] << ',' << cells[col["top5_compact"]] << '\n';
  }
  if (out_path.empty() || out_path == "-") {
    out << os.str();
  } else {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    f << os.str();
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  if (const char* threads = std::getenv("FECIL_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"Class-incremental training with expansion and compression"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, metrics_path, plot_out;
  std::vector<std::string> sets, modes;
  std::size_t trials = 10, seed_count = 0;
  std::uint64_t gc_seed = 0;
  bool verbose = false;

  auto* run = app.add_subcommand("run", "Train every step and write metrics, summary and checkpoints");
  run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--set", sets, "Override a config key (key=value)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its dataset's test split");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--config", config_path, "Config naming the dataset (default: the checkpoint's own)")
      ->check(CLI::ExistingFile);
  eval->add_option("--set", sets, "Override a config key (key=value)");

  auto* grad = app.add_subcommand("gradcheck", "Compare gradients against finite differences");
  grad->add_option("--trials", trials, "Random cases per primitive");
  grad->add_option("--seed", gc_seed, "Seed");
  grad->add_flag("--verbose", verbose, "Print every case");

  auto* ablate = app.add_subcommand("ablate", "Run every compression augmentation over several seeds");
  ablate->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seed_count, "Use seeds 0..N-1 (default: run.seeds)");
  ablate->add_option("--modes", modes, "Subset of none,mixup,cutmix,r_mixup,r_cutmix")->delimiter(',');
  ablate->add_option("--out", out_dir, "Output directory");
  ablate->add_option("--set", sets, "Override a config key (key=value)");

  auto* plot = app.add_subcommand("plotdata", "Extract per-step accuracy series from metrics.csv");
  plot->add_option("--metrics", metrics_path, "metrics.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "Output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, sets, out_dir, out);
    if (eval->parsed()) return cmd_eval(ckpt_path, config_path, sets, out);
    if (grad->parsed()) return cmd_gradcheck(trials, gc_seed, verbose, out);
    if (ablate->parsed()) return cmd_ablate(config_path, sets, seed_count, modes, out_dir, out, err);
    if (plot->parsed()) return cmd_plotdata(metrics_path, plot_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace fecil
