#include "fecil/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fecil {

std::size_t ExemplarMemory::size() const {
  std::size_t n = 0;
  for (const auto& [id, ex] : store_) n += ex.size();
  return n;
}

std::vector<const Exemplar*> ExemplarMemory::flat() const {
  std::vector<const Exemplar*> out;
  for (int c : class_order_) {
    for (const auto& e : store_.at(c)) out.push_back(&e);
  }
  return out;
}

void ExemplarMemory::put_class(int class_id, std::vector<Exemplar> exemplars) {
  for (const auto& e : exemplars) {
    if (e.label != class_id) throw std::invalid_argument("memory: exemplar label does not match its class");
  }
  if (!contains(class_id)) class_order_.push_back(class_id);
  store_[class_id] = std::move(exemplars);
}

void ExemplarMemory::truncate_class(int class_id, std::size_t keep) {
  auto& ex = store_.at(class_id);
  if (ex.size() > keep) ex.resize(keep);
}

void ExemplarMemory::check_invariants() const {
  std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
  for (const auto& [id, ex] : store_) {
    lo = std::min(lo, ex.size());
    hi = std::max(hi, ex.size());
    for (const auto& e : ex) {
      if (e.label != id) throw std::logic_error("memory: exemplar filed under the wrong class");
    }
  }
  if (rule_.mode == BudgetMode::total) {
    if (size() > rule_.amount) throw std::logic_error("memory: total budget exceeded");
    if (!store_.empty() && hi - lo > 1) throw std::logic_error("memory: per-class counts differ by more than one");
  } else if (hi > rule_.amount) {
    throw std::logic_error("memory: per-class budget exceeded");
  }
}

std::vector<std::size_t> herding_select(const TensorD& features, std::size_t m) {
  if (features.rank() != 2 || features.shape()[0] == 0 || features.shape()[1] == 0) {
    throw std::invalid_argument("herding_select: empty feature set " + shape_str(features.shape()));
  }
  if (m == 0) throw std::invalid_argument("herding_select: m must be >= 1");
  const std::size_t n = features.shape()[0], d = features.shape()[1];
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += features.at(i, j);
  }
  for (auto& v : mu) v /= static_cast<double>(n);

  const std::size_t picks = std::min(m, n);
  std::vector<std::size_t> order;
  std::vector<bool> taken(n, false);
  std::vector<double> running(d, 0.0), dist(n);
  for (std::size_t k = 1; k <= picks; ++k) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = mu[j] - (running[j] + features.at(i, j)) / static_cast<double>(k);
        sq += diff * diff;
      }
      dist[i] = std::sqrt(sq);
      best = std::min(best, dist[i]);
    }
    // Lowest index among candidates tied with the minimum up to rounding.
    const double tol = 1e-12 * std::max(1.0, best);
    std::size_t chosen = n;
    for (std::size_t i = 0; i < n && chosen == n; ++i) {
      if (!taken[i] && dist[i] <= best + tol) chosen = i;
    }
    taken[chosen] = true;
    order.push_back(chosen);
    for (std::size_t j = 0; j < d; ++j) running[j] += features.at(chosen, j);
  }
  return order;
}

std::vector<std::size_t> memory_quotas(const MemoryRule& rule, std::size_t class_count) {
  if (class_count == 0) return {};
  if (rule.mode == BudgetMode::per_class) {
    if (rule.amount == 0) throw std::invalid_argument("memory: per-class budget is zero");
    return std::vector<std::size_t>(class_count, rule.amount);
  }
  const std::size_t q = rule.amount / class_count, extra = rule.amount % class_count;
  if (q == 0) {
    throw std::invalid_argument("memory: budget " + std::to_string(rule.amount) + " gives a zero quota for " +
                                std::to_string(class_count) + " classes");
  }
  std::vector<std::size_t> quotas(class_count, q);
  for (std::size_t i = 0; i < extra; ++i) ++quotas[i];
  return quotas;
}

Tensor extract_features(FeatureExtractor& extractor, const Tensor& raw_images, const Normalization& norm,
                        std::size_t batch) {
  NoGradGuard no_grad;
  const std::size_t n = raw_images.shape()[0];
  const std::size_t per = raw_images.size() / std::max<std::size_t>(n, 1);
  const std::size_t d = extractor.out_dim();
  Tensor out(Shape{n, d});
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    Shape s = raw_images.shape();
    s[0] = count;
    Tensor x(s);
    std::copy_n(raw_images.data() + start * per, count * per, x.data());
    normalize_in_place(x, norm);
    auto f = extractor.forward(Var<float>(std::move(x)), Mode::eval);
    std::copy_n(f.value().data(), count * d, out.data() + start * d);
  }
  require_finite(out, "feature extraction");
  return out;
}

ExemplarMemory update_memory(const ExemplarMemory& mem, const LabeledDataset& train,
                             const std::vector<int>& new_class_ids, FeatureExtractor& extractor,
                             const Normalization& norm) {
  for (int c : new_class_ids) {
    if (mem.contains(c)) throw std::invalid_argument("update_memory: class " + std::to_string(c) + " already stored");
  }
  ExemplarMemory out = mem;
  const auto quotas = memory_quotas(mem.rule(), mem.classes().size() + new_class_ids.size());
  for (std::size_t i = 0; i < mem.classes().size(); ++i) out.truncate_class(mem.classes()[i], quotas[i]);

  const std::size_t per = train.image_size();
  for (std::size_t k = 0; k < new_class_ids.size(); ++k) {
    const int c = new_class_ids[k];
    const auto idx = train.indices_of(c);
    if (idx.empty()) throw std::invalid_argument("update_memory: no training samples for class " + std::to_string(c));
    const LabeledDataset cls = train.subset(idx);
    const Tensor f = extract_features(extractor, cls.images, norm);
    const std::size_t d = f.shape()[1];
    TensorD unit(Shape{idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += static_cast<double>(f.at(i, j)) * f.at(i, j);
      const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
      for (std::size_t j = 0; j < d; ++j) unit.at(i, j) = f.at(i, j) * inv;
    }
    std::vector<Exemplar> chosen;
    for (std::size_t pick : herding_select(unit, quotas[mem.classes().size() + k])) {
      Tensor image(Shape{train.channels(), train.height(), train.width()});
      std::copy_n(train.image(idx[pick]), per, image.data());
      chosen.push_back(Exemplar{idx[pick], c, std::move(image)});
    }
    out.put_class(c, std::move(chosen));
  }
  out.check_invariants();
  return out;
}

std::vector<const Exemplar*> sample_memory_batch(const ExemplarMemory& mem, std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("sample_memory_batch: count must be >= 1");
  const auto all = mem.flat();
  if (all.empty()) throw std::invalid_argument("sample_memory_batch: memory is empty");
  std::vector<const Exemplar*> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(all[uniform_index(rng, all.size())]);
  return out;
}

}  // namespace fecil
