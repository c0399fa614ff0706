#include "fecil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "fecil/loss.hpp"
#include "fecil/optim.hpp"

namespace fecil {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::size_t kEvalBatch = 256;

std::uint64_t phase_code(Phase p) { return static_cast<std::uint64_t>(p) + 1; }

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Random shift by up to `pad` pixels with zero fill, optional mirror.
void crop_flip(float* img, std::size_t c, std::size_t h, std::size_t w, int pad, bool flip, Rng& rng) {
  if (pad <= 0 && !flip) return;
  std::uniform_int_distribution<int> shift(-pad, pad);
  const int dy = pad > 0 ? shift(rng) : 0;
  const int dx = pad > 0 ? shift(rng) : 0;
  const bool mirror = flip && std::bernoulli_distribution(0.5)(rng);
  if (dy == 0 && dx == 0 && !mirror) return;
  std::vector<float> src(img, img + c * h * w);
  const int H = static_cast<int>(h), W = static_cast<int>(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* s = src.data() + ch * h * w;
    float* d = img + ch * h * w;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int sy = y + dy;
        int sx = x + dx;
        if (mirror) sx = W - 1 - sx;
        d[y * W + x] = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? s[sy * W + sx] : 0.0f;
      }
    }
  }
}

Tensor gather(const Tensor& images, const std::vector<std::size_t>& idx) {
  const auto& s = images.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  Tensor out(Shape{idx.size(), s[1], s[2], s[3]});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(images.data() + idx[i] * per, per, out.data() + i * per);
  return out;
}

void augment_batch(Tensor& batch, const TrainConfig& tc, Rng& rng) {
  const auto& s = batch.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  for (std::size_t i = 0; i < s[0]; ++i) crop_flip(batch.data() + i * per, s[1], s[2], s[3], tc.crop_pad, tc.flip, rng);
}

std::unordered_map<int, int> row_map(const std::vector<int>& ids) {
  std::unordered_map<int, int> m;
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = static_cast<int>(i);
  return m;
}

std::vector<int> to_rows(const std::vector<int>& labels, const std::unordered_map<int, int>& rows) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = rows.find(labels[i]);
    if (it == rows.end()) throw std::invalid_argument("label " + std::to_string(labels[i]) + " has no head row");
    out[i] = it->second;
  }
  return out;
}

using Seconds = std::chrono::duration<double>;

// Shared epoch loop. `batch_loss` builds the graph for one batch and returns
// the scalar loss; the loop handles ordering, schedule, update and logging.
template <typename BatchLoss>
void train_epochs(const RunConfig& rc, std::size_t step, Phase phase, int epochs, std::size_t n, SgdMomentum& opt,
                  std::vector<EpochRecord>* log, BatchLoss&& batch_loss) {
  const TrainConfig& tc = rc.train;
  if (n == 0) throw std::invalid_argument(to_string(phase) + ": no training samples");
  for (int e = 0; e < epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(e, epochs, tc.base_lr);
    Rng order_rng = substream(rc.seed, {step, phase_code(phase), static_cast<std::uint64_t>(e), 0});
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);

    double total = 0;
    std::size_t seen = 0;
    std::size_t b = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size, ++b) {
      const std::size_t stop = std::min(n, start + tc.batch_size);
      if (stop - start < 2) break;  // batch norm needs two samples
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      Rng batch_rng = substream(rc.seed, {step, phase_code(phase), static_cast<std::uint64_t>(e), b + 1});
      Var<float> loss = batch_loss(idx, batch_rng);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("step " + std::to_string(step) + " " + to_string(phase) + " epoch " + std::to_string(e) +
                           " batch " + std::to_string(b) + ": loss is " + std::to_string(value));
      }
      opt.zero_grad();
      backward(loss);
      opt.step(lr);
      total += value * static_cast<double>(idx.size());
      seen += idx.size();
    }
    const double secs = Seconds(std::chrono::steady_clock::now() - t0).count();
    if (log) log->push_back(EpochRecord{phase, e, total / static_cast<double>(seen), lr, secs});
  }
}

std::vector<Tensor> snapshot(FeatureExtractor& e) {
  std::vector<Tensor> out;
  e.visit_tensors([&out](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

template <typename LogitsFn>
Tensor batched_logits(const Tensor& raw, const Normalization& norm, LogitsFn&& fn) {
  NoGradGuard guard;
  const std::size_t n = raw.shape()[0];
  std::vector<std::size_t> idx;
  Tensor out;
  std::size_t cols = 0;
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t stop = std::min(n, start + kEvalBatch);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor batch = gather(raw, idx);
    normalize_in_place(batch, norm);
    const Tensor logits = fn(Var<float>(std::move(batch))).value();
    if (start == 0) {
      cols = logits.shape()[1];
      out = Tensor(Shape{n, cols});
    }
    std::copy_n(logits.data(), logits.size(), out.data() + start * cols);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw ConfigError("train." + m); };
  if (epochs_expand <= 0) bad("epochs_expand must be positive");
  if (epochs_compress <= 0) bad("epochs_compress must be positive");
  if (!(base_lr > 0)) bad("base_lr must be positive");
  if (batch_size < 2) bad("batch_size must be at least 2");
  if (momentum < 0 || momentum >= 1) bad("momentum must be in [0, 1)");
  if (weight_decay < 0) bad("weight_decay must be non-negative");
  if (!(tau > 0)) bad("tau must be positive");
  if (!(alpha > 0)) bad("alpha must be positive");
  if (ce_weight_in_compression < 0) bad("ce_weight_in_compression must be non-negative");
  if (crop_pad < 0) bad("crop_pad must be non-negative");
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.dataset.kind = "synth";
  c.protocol = Protocol::b0;
  c.steps = 5;
  c.memory = MemoryRule{BudgetMode::total, 100};
  c.train.epochs_expand = 60;
  c.train.epochs_compress = 60;
  c.train.batch_size = 32;
  return c;
}

namespace {

const std::vector<std::string> kKnownKeys = {
    "dataset.kind",          "dataset.path",          "dataset.seed",
    "dataset.classes",       "dataset.train_per_class", "dataset.test_per_class",
    "dataset.side",          "protocol.name",         "protocol.steps",
    "memory.mode",           "memory.size",           "backbone.width",
    "backbone.blocks_per_stage", "backbone.stages",   "train.epochs_expand",
    "train.epochs_compress", "train.base_lr",         "train.batch_size",
    "train.momentum",        "train.weight_decay",    "train.tau",
    "train.alpha",           "train.compress_aug",    "train.ce_weight_in_compression",
    "train.crop_pad",        "train.flip",            "run.seed",
    "run.seeds",             "report.wall_time_in_metrics",
};

template <typename T>
T non_negative(const Config& c, const std::string& key, T fallback) {
  const long long v = c.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError(key + " must be non-negative, got " + std::to_string(v));
  return static_cast<T>(v);
}

}  // namespace

RunConfig RunConfig::from(const Config& c) {
  c.require_known(kKnownKeys);
  RunConfig r;
  auto wrap = [&](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
  r.dataset.kind = c.get_string("dataset.kind", r.dataset.kind);
  if (r.dataset.kind != "synth" && r.dataset.kind != "idx" && r.dataset.kind != "cifar100") {
    throw ConfigError("dataset.kind must be synth, idx or cifar100, got '" + r.dataset.kind + "'");
  }
  r.dataset.path = c.get_string("dataset.path", "");
  r.dataset.seed = non_negative<std::uint64_t>(c, "dataset.seed", r.dataset.seed);
  r.dataset.synth_classes = non_negative<std::size_t>(c, "dataset.classes", r.dataset.synth_classes);
  r.dataset.synth_train_per_class = non_negative<std::size_t>(c, "dataset.train_per_class", r.dataset.synth_train_per_class);
  r.dataset.synth_test_per_class = non_negative<std::size_t>(c, "dataset.test_per_class", r.dataset.synth_test_per_class);
  r.dataset.synth_side = non_negative<std::size_t>(c, "dataset.side", r.dataset.synth_side);

  wrap("protocol.name", [&] { r.protocol = parse_protocol(c.get_string("protocol.name", "b0")); });
  r.steps = non_negative<std::size_t>(c, "protocol.steps", r.steps);

  if (c.has("memory.mode") || c.has("memory.size")) {
    MemoryRule m;
    const std::string mode = c.get_string("memory.mode", "total");
    if (mode == "total") {
      m.mode = BudgetMode::total;
    } else if (mode == "per_class") {
      m.mode = BudgetMode::per_class;
    } else {
      throw ConfigError("memory.mode must be total or per_class, got '" + mode + "'");
    }
    m.amount = non_negative<std::size_t>(c, "memory.size", m.mode == BudgetMode::total ? 2000 : 20);
    r.memory = m;
  }

  r.backbone.width = static_cast<int>(c.get_int("backbone.width", r.backbone.width));
  r.backbone.blocks_per_stage = static_cast<int>(c.get_int("backbone.blocks_per_stage", r.backbone.blocks_per_stage));
  r.backbone.stages = static_cast<int>(c.get_int("backbone.stages", r.backbone.stages));

  auto& t = r.train;
  t.epochs_expand = static_cast<int>(c.get_int("train.epochs_expand", t.epochs_expand));
  t.epochs_compress = static_cast<int>(c.get_int("train.epochs_compress", t.epochs_compress));
  t.base_lr = c.get_double("train.base_lr", t.base_lr);
  t.batch_size = non_negative<std::size_t>(c, "train.batch_size", t.batch_size);
  t.momentum = c.get_double("train.momentum", t.momentum);
  t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
  t.tau = c.get_double("train.tau", t.tau);
  t.alpha = c.get_double("train.alpha", t.alpha);
  wrap("train.compress_aug",
       [&] { t.compress_aug = parse_compress_aug(c.get_string("train.compress_aug", to_string(t.compress_aug))); });
  t.ce_weight_in_compression = c.get_double("train.ce_weight_in_compression", t.ce_weight_in_compression);
  t.crop_pad = static_cast<int>(c.get_int("train.crop_pad", t.crop_pad));
  t.flip = c.get_bool("train.flip", t.flip);
  t.validate();

  r.seed = non_negative<std::uint64_t>(c, "run.seed", r.seed);
  const auto seeds = c.get_int_list("run.seeds", {static_cast<long long>(r.seed)});
  r.seeds.clear();
  for (long long s : seeds) {
    if (s < 0) throw ConfigError("run.seeds must be non-negative");
    r.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  r.wall_time_in_metrics = c.get_bool("report.wall_time_in_metrics", false);
  return r;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "dataset.kind=" << dataset.kind << "\n";
  if (!dataset.path.empty()) os << "dataset.path=" << dataset.path << "\n";
  os << "dataset.seed=" << dataset.seed << "\n";
  if (dataset.kind == "synth") {
    os << "dataset.classes=" << dataset.synth_classes << "\n"
       << "dataset.train_per_class=" << dataset.synth_train_per_class << "\n"
       << "dataset.test_per_class=" << dataset.synth_test_per_class << "\n"
       << "dataset.side=" << dataset.synth_side << "\n";
  }
  os << "protocol.name=" << to_string(protocol) << "\n"
     << "protocol.steps=" << steps << "\n";
  if (memory) {
    os << "memory.mode=" << (memory->mode == BudgetMode::total ? "total" : "per_class") << "\n"
       << "memory.size=" << memory->amount << "\n";
  }
  os << "backbone.width=" << backbone.width << "\n"
     << "backbone.blocks_per_stage=" << backbone.blocks_per_stage << "\n"
     << "backbone.stages=" << backbone.stages << "\n"
     << "train.epochs_expand=" << train.epochs_expand << "\n"
     << "train.epochs_compress=" << train.epochs_compress << "\n"
     << "train.base_lr=" << fmt("%.17g", train.base_lr) << "\n"
     << "train.batch_size=" << train.batch_size << "\n"
     << "train.momentum=" << fmt("%.17g", train.momentum) << "\n"
     << "train.weight_decay=" << fmt("%.17g", train.weight_decay) << "\n"
     << "train.tau=" << fmt("%.17g", train.tau) << "\n"
     << "train.alpha=" << fmt("%.17g", train.alpha) << "\n"
     << "train.compress_aug=" << to_string(train.compress_aug) << "\n"
     << "train.ce_weight_in_compression=" << fmt("%.17g", train.ce_weight_in_compression) << "\n"
     << "train.crop_pad=" << train.crop_pad << "\n"
     << "train.flip=" << (train.flip ? "true" : "false") << "\n"
     << "run.seed=" << seed << "\n";
  return os.str();
}

DataBundle load_data(const DatasetConfig& c) {
  DataBundle d;
  namespace fs = std::filesystem;
  if (c.kind == "synth") {
    auto pair = synth_gaussians(c.synth_classes, c.synth_train_per_class, c.synth_test_per_class, c.synth_side, c.seed);
    d.train = std::move(pair.train);
    d.test = std::move(pair.test);
  } else if (c.kind == "idx") {
    const fs::path p(c.path);
    d.train = load_idx(p / "train-images-idx3-ubyte", p / "train-labels-idx1-ubyte", Split::train);
    d.test = load_idx(p / "t10k-images-idx3-ubyte", p / "t10k-labels-idx1-ubyte", Split::test);
  } else if (c.kind == "cifar100") {
    const fs::path p(c.path);
    d.train = load_cifar_binary(p / "train.bin", true, Split::train);
    d.test = load_cifar_binary(p / "test.bin", true, Split::test);
  } else {
    throw ConfigError("unknown dataset kind '" + c.kind + "'");
  }
  d.num_classes = std::max(d.train.num_classes, d.test.num_classes);
  d.train.num_classes = d.test.num_classes = d.num_classes;
  return d;
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::bootstrap: return "bootstrap";
    case Phase::expand: return "expand";
    case Phase::compress: return "compress";
  }
  return "?";
}

CompactNetwork train_first_task(const LabeledDataset& data, const std::vector<int>& classes, const Normalization& norm,
                                const RunConfig& rc, std::size_t step, std::vector<EpochRecord>* log) {
  if (data.size() == 0) throw std::invalid_argument("first task: no training data");
  Rng init = substream(rc.seed, {step, kInitStream});
  FeatureExtractor extractor(rc.backbone, init);
  Classifier head(extractor.out_dim(), classes, init);
  CompactNetwork net{std::move(extractor), std::move(head)};
  const auto rows = to_rows(data.labels, row_map(classes));

  SgdMomentum opt(net.parameters(), rc.train.momentum, rc.train.weight_decay);
  train_epochs(rc, step, Phase::bootstrap, rc.train.epochs_expand, data.size(), opt, log,
               [&](const std::vector<std::size_t>& idx, Rng& rng) {
                 Tensor x = gather(data.images, idx);
                 augment_batch(x, rc.train, rng);
                 normalize_in_place(x, norm);
                 std::vector<int> y(idx.size());
                 for (std::size_t i = 0; i < idx.size(); ++i) y[i] = rows[idx[i]];
                 auto logits = net.forward(Var<float>(std::move(x)), Mode::train);
                 return softmax_cross_entropy(logits, one_hot<float>(y, classes.size()));
               });
  return net;
}

void train_expansion(DynamicNetwork& net, const IncrementalDataset& data, const Normalization& norm,
                     const RunConfig& rc, std::size_t step, std::vector<EpochRecord>* log, Classifier* unaligned) {
  if (net.head_aux.rows() == 0) throw std::logic_error("expansion: network has no auxiliary head");
  const auto& ids = net.head_big.class_ids();
  const auto rows = to_rows(data.labels, row_map(ids));
  const auto aux = aux_targets(data.labels, ids, net.old_class_count);
  const std::size_t aux_classes = net.head_aux.rows();
  const auto frozen = net.prev.parameters();

  SgdMomentum opt(net.trainable_parameters(), rc.train.momentum, rc.train.weight_decay);
  train_epochs(rc, step, Phase::expand, rc.train.epochs_expand, data.size(), opt, log,
               [&](const std::vector<std::size_t>& idx, Rng& rng) {
                 Tensor x = gather(data.images, idx);
                 augment_batch(x, rc.train, rng);
                 normalize_in_place(x, norm);
                 std::vector<int> y(idx.size()), ya(idx.size());
                 for (std::size_t i = 0; i < idx.size(); ++i) {
                   y[i] = rows[idx[i]];
                   ya[i] = aux[idx[i]];
                 }
                 auto out = forward_big(net, Var<float>(std::move(x)), Mode::train);
                 auto loss = ops::add(softmax_cross_entropy(out.logits_big, one_hot<float>(y, ids.size())),
                                      softmax_cross_entropy(out.logits_aux, one_hot<float>(ya, aux_classes)));
                 for (const auto& p : frozen) {
                   if (p.requires_grad() || p.grad()) throw std::logic_error("expansion: frozen extractor is trainable");
                 }
                 return loss;
               });
  for (const auto& p : frozen) {
    if (p.grad()) throw std::logic_error("expansion: gradient reached the frozen extractor");
  }
  if (unaligned) *unaligned = net.head_big;
  net.head_big = weight_align(net.head_big, net.old_class_ids(), net.new_class_ids());
  net.head_aux = Classifier();
}

void train_compression(DynamicNetwork& big, CompactNetwork& student, const IncrementalDataset& data,
                       const ExemplarMemory& mem, const Normalization& norm, const RunConfig& rc, std::size_t step,
                       std::vector<EpochRecord>* log) {
  const TrainConfig& tc = rc.train;
  const auto& ids = student.head.class_ids();
  if (ids != big.head_big.class_ids()) throw std::logic_error("compression: student and teacher heads disagree");
  if (is_rehearsal(tc.compress_aug) && mem.empty()) {
    throw std::invalid_argument("compression: rehearsal augmentation needs a non-empty memory");
  }
  const auto rmap = row_map(ids);
  const auto rows = to_rows(data.labels, rmap);
  const std::size_t classes = ids.size();
  const auto& s = data.images.shape();
  const std::size_t per = s[1] * s[2] * s[3];

  const auto before_prev = snapshot(big.prev);
  const auto before_next = snapshot(big.next);
  const Tensor before_w = big.head_big.weight().value();
  const Tensor before_b = big.head_big.bias().value();

  SgdMomentum opt(student.parameters(), tc.momentum, tc.weight_decay);
  const bool use_ce = tc.ce_weight_in_compression > 0;
  train_epochs(rc, step, Phase::compress, tc.epochs_compress, data.size(), opt, log,
               [&](const std::vector<std::size_t>& idx, Rng& rng) {
                 Tensor x = gather(data.images, idx);
                 augment_batch(x, tc, rng);
                 const std::size_t b = idx.size();
                 Tensor targets;
                 if (tc.compress_aug == CompressAug::none) {
                   if (use_ce) {
                     std::vector<int> y(b);
                     for (std::size_t i = 0; i < b; ++i) y[i] = rows[idx[i]];
                     targets = one_hot<float>(y, classes);
                   }
                 } else {
                   std::vector<Tensor> imgs(b);
                   std::vector<int> labels(b);
                   for (std::size_t i = 0; i < b; ++i) {
                     imgs[i] = Tensor(Shape{s[1], s[2], s[3]},
                                      std::vector<float>(x.data() + i * per, x.data() + (i + 1) * per));
                     labels[i] = data.labels[idx[i]];
                   }
                   const auto mixed = is_rehearsal(tc.compress_aug)
                                          ? rehearsal_pair_batch(imgs, labels, mem, tc.compress_aug, tc.alpha, rng)
                                          : within_batch_mix(imgs, labels, tc.compress_aug, tc.alpha, rng);
                   if (use_ce) targets = Tensor(Shape{b, classes});
                   for (std::size_t i = 0; i < b; ++i) {
                     std::copy_n(mixed[i].image.data(), per, x.data() + i * per);
                     if (use_ce) {
                       const auto t = mixed_target(rmap.at(mixed[i].label_i), rmap.at(mixed[i].label_j),
                                                   mixed[i].lambda_eff, classes);
                       for (std::size_t k = 0; k < classes; ++k) targets.at(i, k) = static_cast<float>(t[k]);
                     }
                   }
                 }
                 normalize_in_place(x, norm);
                 Var<float> input(std::move(x));
                 Tensor teacher;
                 {
                   NoGradGuard guard;
                   teacher = forward_big(big, input, Mode::eval).logits_big.value();
                 }
                 auto logits = student.forward(input, Mode::train);
                 auto loss = distillation_loss(logits, teacher, static_cast<float>(tc.tau));
                 if (use_ce) {
                   loss = ops::add(loss, ops::scale(softmax_cross_entropy(logits, targets),
                                                    static_cast<float>(tc.ce_weight_in_compression)));
                 }
                 return loss;
               });

  if (snapshot(big.prev) != before_prev || snapshot(big.next) != before_next ||
      !(big.head_big.weight().value() == before_w) || !(big.head_big.bias().value() == before_b)) {
    throw std::logic_error("compression: teacher parameters changed");
  }
  const std::size_t old_count = big.old_class_count;
  const std::vector<int> old_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(old_count));
  const std::vector<int> new_ids(ids.begin() + static_cast<std::ptrdiff_t>(old_count), ids.end());
  student.head = weight_align(student.head, old_ids, new_ids);
}

Tensor big_logits(DynamicNetwork& net, const Tensor& raw, const Normalization& norm) {
  return batched_logits(raw, norm, [&](const Var<float>& x) { return forward_big(net, x, Mode::eval).logits_big; });
}

Tensor compact_logits(CompactNetwork& net, const Tensor& raw, const Normalization& norm) {
  return batched_logits(raw, norm, [&](const Var<float>& x) { return net.forward(x, Mode::eval); });
}

EvalResult evaluate_logits(const Tensor& logits, const std::vector<int>& labels, const std::vector<int>& class_ids) {
  const auto rows = to_rows(labels, row_map(class_ids));
  return EvalResult{topk_hits(logits, rows, 1), topk_hits(logits, rows, std::min<std::size_t>(5, class_ids.size()))};
}

EvalResult evaluate_compact(CompactNetwork& net, const LabeledDataset& test, const Normalization& norm) {
  const auto known = test.filter_classes(net.head.class_ids());
  return evaluate_logits(compact_logits(net, known.images, norm), known.labels, net.head.class_ids());
}

IncrementalRunner::IncrementalRunner(RunConfig config, std::shared_ptr<const DataBundle> data)
    : config_(std::move(config)), data_(std::move(data)) {
  if (!data_) throw std::invalid_argument("runner: no data");
  config_.train.validate();
  config_.backbone.in_channels = static_cast<int>(data_->train.channels());
  config_.backbone.image_side = static_cast<int>(data_->train.height());
  if (data_->train.height() != data_->train.width()) throw ShapeError("runner: images must be square");
  config_.backbone.validate();
  sequence_ = make_task_sequence(data_->num_classes, config_.protocol, config_.steps, config_.seed);
  if (config_.memory) sequence_.memory_rule = *config_.memory;
  memory_ = ExemplarMemory(sequence_.memory_rule);
}

void IncrementalRunner::expansion_phase() {
  if (mid_step_) throw std::logic_error("runner: expansion phase already done for step " + std::to_string(next_step()));
  if (done()) throw std::logic_error("runner: all steps are done");
  const std::size_t t = next_step();
  const auto& classes = sequence_.tasks[t - 1];
  pending_ = StepReport{};
  pending_.step = t;
  try {
    const LabeledDataset task = data_->train.filter_classes(classes);
    if (t == 1) {
      norm_ = compute_normalization(task);
      model_ = train_first_task(task, classes, norm_, config_, t, &pending_.epochs);
    } else {
      Rng init = substream(config_.seed, {t, kInitStream});
      big_ = expand(*model_, classes, init);
      current_ = build_incremental_dataset(task, memory_);
      train_expansion(*big_, *current_, norm_, config_, t, &pending_.epochs);
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("step " + std::to_string(t) + ": " + e.what());
  }
  mid_step_ = true;
}

void IncrementalRunner::compression_phase() {
  if (!mid_step_) throw std::logic_error("runner: compression phase before expansion");
  const std::size_t t = next_step();
  const auto& classes = sequence_.tasks[t - 1];
  try {
    if (t > 1) {
      Rng init = substream(config_.seed, {t, kInitStream, 1});
      CompactNetwork student = compress_init(*model_, classes, init);
      train_compression(*big_, student, *current_, memory_, norm_, config_, t, &pending_.epochs);
      model_ = std::move(student);
    }
    memory_ = update_memory(memory_, data_->train, classes, model_->extractor, norm_);
    memory_.check_invariants();

    const auto seen = sequence_.seen_classes(t);
    const LabeledDataset test = data_->test.filter_classes(seen);
    const auto compact = evaluate_logits(compact_logits(*model_, test.images, norm_), test.labels,
                                         model_->head.class_ids());
    pending_.top1_compact = compact.top1;
    pending_.top5_compact = compact.top5;
    pending_.params_compact = param_count(*model_);
    pending_.params_compact_extractor = param_count(model_->extractor);
    if (t == 1) {
      pending_.top1_big = compact.top1;
      pending_.top5_big = compact.top5;
      pending_.params_big = pending_.params_compact;
    } else {
      const auto big = evaluate_logits(big_logits(*big_, test.images, norm_), test.labels, big_->head_big.class_ids());
      pending_.top1_big = big.top1;
      pending_.top5_big = big.top5;
      pending_.params_big = param_count(*big_);
    }
    pending_.memory_size = memory_.size();
    pending_.seen_classes = seen;
  } catch (const std::exception& e) {
    throw std::runtime_error("step " + std::to_string(t) + ": " + e.what());
  }
  big_.reset();
  current_.reset();
  reports_.push_back(std::move(pending_));
  pending_ = StepReport{};
  mid_step_ = false;
}

void IncrementalRunner::run_step() {
  expansion_phase();
  compression_phase();
}

RunSummary summarize(const std::vector<StepReport>& reports, std::uint64_t seed, CompressAug aug) {
  if (reports.empty()) throw std::invalid_argument("summary of an empty run");
  RunSummary s;
  s.seed = seed;
  s.compress_aug = to_string(aug);
  for (const auto& r : reports) {
    s.top1_big.push_back(rounded_percent(r.top1_big.value()));
    s.top5_big.push_back(rounded_percent(r.top5_big.value()));
    s.top1_compact.push_back(rounded_percent(r.top1_compact.value()));
    s.top5_compact.push_back(rounded_percent(r.top5_compact.value()));
    s.params_big.push_back(r.params_big);
    s.params_compact.push_back(r.params_compact);
    s.params_compact_extractor.push_back(r.params_compact_extractor);
  }
  s.avg_big = average_incremental_accuracy(s.top1_big);
  s.avg_compact = average_incremental_accuracy(s.top1_compact);
  s.last_big = s.top1_big.back();
  s.last_compact = s.top1_compact.back();
  return s;
}

double median_epoch_seconds(const std::vector<StepReport>& reports, Phase phase, std::size_t step) {
  std::vector<double> secs;
  for (const auto& r : reports) {
    if (step != 0 && r.step != step) continue;
    for (const auto& e : r.epochs) {
      if (e.phase == phase && e.epoch > 0) secs.push_back(e.seconds);
    }
  }
  if (secs.size() < 3) {
    throw std::invalid_argument("epoch timing: need at least 3 measured " + to_string(phase) + " epochs after warm-up, got " +
                                std::to_string(secs.size()));
  }
  return median(std::move(secs));
}

double measure_epoch_time(Phase phase, const std::vector<StepReport>& run, const std::vector<StepReport>& baseline) {
  const double base = median_epoch_seconds(baseline, phase);
  if (!(base > 0)) throw std::domain_error("epoch timing: baseline median is not positive");
  return median_epoch_seconds(run, phase) / base;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string metrics_csv(const std::vector<StepReport>& reports, bool wall_time) {
  std::ostringstream os;
  os << "step,phase,epoch,loss,lr,top1_big,top5_big,top1_compact,top5_compact,epoch_time_s\n";
  for (const auto& r : reports) {
    for (const auto& e : r.epochs) {
      os << r.step << ',' << to_string(e.phase) << ',' << e.epoch << ',' << fmt("%.9g", e.loss) << ','
         << fmt("%.9g", e.lr) << ",,,,," << (wall_time ? fmt("%.6f", e.seconds) : "") << '\n';
    }
    os << r.step << ",eval,,,," << format_percent(r.top1_big.value()) << ',' << format_percent(r.top5_big.value())
       << ',' << format_percent(r.top1_compact.value()) << ',' << format_percent(r.top5_compact.value()) << ",\n";
  }
  return os.str();
}

std::string timing_csv(const std::vector<StepReport>& reports) {
  std::ostringstream os;
  os << "step,phase,epoch,seconds\n";
  for (const auto& r : reports) {
    for (const auto& e : r.epochs) {
      os << r.step << ',' << to_string(e.phase) << ',' << e.epoch << ',' << fmt("%.6f", e.seconds) << '\n';
    }
  }
  return os.str();
}

nlohmann::ordered_json summary_json(const RunSummary& s, const std::vector<StepReport>& reports) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["compress_aug"] = s.compress_aug;
  j["steps"] = reports.size();
  j["top1_big"] = s.top1_big;
  j["top5_big"] = s.top5_big;
  j["top1_compact"] = s.top1_compact;
  j["top5_compact"] = s.top5_compact;
  j["avg_big"] = s.avg_big;
  j["avg_compact"] = s.avg_compact;
  j["last_big"] = s.last_big;
  j["last_compact"] = s.last_compact;
  j["params_big"] = s.params_big;
  j["params_compact"] = s.params_compact;
  j["params_compact_extractor"] = s.params_compact_extractor;
  std::vector<std::size_t> mem;
  for (const auto& r : reports) mem.push_back(r.memory_size);
  j["memory_size"] = mem;
  return j;
}

std::string memory_json(const ExemplarMemory& mem, std::size_t step) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["size"] = mem.size();
  auto& cls = j["classes"] = nlohmann::ordered_json::array();
  for (int c : mem.classes()) {
    std::vector<std::size_t> ids;
    for (const auto& e : mem.exemplars(c)) ids.push_back(e.id);
    cls.push_back({{"class", c}, {"ids", ids}});
  }
  return j.dump(2) + "\n";
}

}  // namespace

RunResult run_incremental(const RunConfig& config, const std::filesystem::path& out_dir) {
  auto data = std::make_shared<const DataBundle>(load_data(config.dataset));
  IncrementalRunner runner(config, data);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  while (!runner.done()) {
    runner.run_step();
    if (!out_dir.empty()) {
      const std::size_t t = runner.reports().size();
      save_model(out_dir / ("ckpt_step" + std::to_string(t)), runner.model(), runner.normalization(),
                 config.echo() + "step=" + std::to_string(t) + "\n");
      write_text(out_dir / ("memory_step" + std::to_string(t) + ".json"), memory_json(runner.memory(), t));
    }
  }
  RunResult result{runner.reports(), summarize(runner.reports(), config.seed, config.train.compress_aug)};
  if (!out_dir.empty()) {
    write_text(out_dir / "metrics.csv", metrics_csv(result.reports, config.wall_time_in_metrics));
    write_text(out_dir / "timing.csv", timing_csv(result.reports));
    write_text(out_dir / "summary.json", summary_json(result.summary, result.reports).dump(2) + "\n");
    write_text(out_dir / "config.txt", config.echo());
  }
  return result;
}

}  // namespace fecil
