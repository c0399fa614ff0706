#include "fecil/mixaug.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fecil {

std::string to_string(CompressAug aug) {
  switch (aug) {
    case CompressAug::none: return "none";
    case CompressAug::mixup: return "mixup";
    case CompressAug::cutmix: return "cutmix";
    case CompressAug::r_mixup: return "r_mixup";
    case CompressAug::r_cutmix: return "r_cutmix";
  }
  return "?";
}

CompressAug parse_compress_aug(const std::string& name) {
  for (auto a : {CompressAug::none, CompressAug::mixup, CompressAug::cutmix, CompressAug::r_mixup, CompressAug::r_cutmix}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown augmentation '" + name + "' (expected none|mixup|cutmix|r_mixup|r_cutmix)");
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("sample_lambda: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    const double a = gamma(rng), b = gamma(rng);
    const double lam = a / (a + b);
    if (lam > 0.0 && lam < 1.0) return lam;
  }
}

Box sample_box(int width, int height, double lambda, Rng& rng) {
  if (width < 1 || height < 1) throw std::invalid_argument("sample_box: image must be at least 1x1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("sample_box: lambda outside [0, 1]");
  std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height);
  Box b;
  b.cx = ux(rng);
  b.cy = uy(rng);
  const double cut = std::sqrt(1.0 - lambda);
  b.rw = width * cut;
  b.rh = height * cut;
  return b;
}

PixelRect clip_box(const Box& box, int width, int height) {
  const int w = static_cast<int>(std::lround(box.rw));
  const int h = static_cast<int>(std::lround(box.rh));
  const int x0 = static_cast<int>(std::floor(box.cx - w / 2.0));
  const int y0 = static_cast<int>(std::floor(box.cy - h / 2.0));
  PixelRect r{std::clamp(x0, 0, width), std::clamp(x0 + w, 0, width), std::clamp(y0, 0, height),
              std::clamp(y0 + h, 0, height)};
  if (r.x1 <= r.x0 || r.y1 <= r.y0) r = PixelRect{};
  return r;
}

CutMixResult cutmix_apply(const Tensor& x_i, const Tensor& x_j, const Box& box) {
  if (x_i.shape() != x_j.shape() || x_i.rank() != 3) {
    throw ShapeError("cutmix_apply: images must share a [C,H,W] shape, got " + shape_str(x_i.shape()) + " and " +
                     shape_str(x_j.shape()));
  }
  const int c = static_cast<int>(x_i.shape()[0]), h = static_cast<int>(x_i.shape()[1]), w = static_cast<int>(x_i.shape()[2]);
  const PixelRect r = clip_box(box, w, h);
  Tensor out = x_i;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = r.y0; y < r.y1; ++y) {
      const std::size_t row = (static_cast<std::size_t>(ch) * h + y) * w;
      std::copy(x_j.data() + row + r.x0, x_j.data() + row + r.x1, out.data() + row + r.x0);
    }
  }
  const double lambda_eff = 1.0 - static_cast<double>(r.area()) / (static_cast<double>(w) * h);
  return CutMixResult{std::move(out), lambda_eff};
}

Tensor mixup_apply(const Tensor& x_i, const Tensor& x_j, double lambda) {
  if (x_i.shape() != x_j.shape()) {
    throw ShapeError("mixup_apply: shape mismatch " + shape_str(x_i.shape()) + " vs " + shape_str(x_j.shape()));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixup_apply: lambda outside [0, 1]");
  Tensor out(x_i.shape());
  const float a = static_cast<float>(lambda), b = static_cast<float>(1.0 - lambda);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * x_i[k] + b * x_j[k];
  return out;
}

std::vector<double> mixed_target(int y_i, int y_j, double lambda_eff, std::size_t classes) {
  const auto valid = [classes](int y) { return y >= 0 && static_cast<std::size_t>(y) < classes; };
  if (!valid(y_i) || !valid(y_j)) {
    throw std::invalid_argument("mixed_target: class index outside [0, " + std::to_string(classes) + ")");
  }
  if (!(lambda_eff >= 0.0 && lambda_eff <= 1.0)) throw std::invalid_argument("mixed_target: lambda outside [0, 1]");
  std::vector<double> row(classes, 0.0);
  row[static_cast<std::size_t>(y_i)] += lambda_eff;
  row[static_cast<std::size_t>(y_j)] += 1.0 - lambda_eff;
  return row;
}

namespace {

MixedSample mix_pair(const Tensor& xi, int yi, const Tensor& xj, int yj, CompressAug aug, double alpha, Rng& rng) {
  const double lam = sample_lambda(alpha, rng);
  if (aug == CompressAug::cutmix || aug == CompressAug::r_cutmix) {
    const int h = static_cast<int>(xi.shape()[1]), w = static_cast<int>(xi.shape()[2]);
    auto mixed = cutmix_apply(xi, xj, sample_box(w, h, lam, rng));
    return MixedSample{std::move(mixed.image), yi, yj, mixed.lambda_eff};
  }
  return MixedSample{mixup_apply(xi, xj, lam), yi, yj, lam};
}

}  // namespace

std::vector<MixedSample> rehearsal_pair_batch(const std::vector<Tensor>& images, const std::vector<int>& labels,
                                              const ExemplarMemory& mem, CompressAug aug, double alpha, Rng& rng) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::invalid_argument("rehearsal_pair_batch: batch must be non-empty with one label per image");
  }
  if (aug == CompressAug::none) throw std::invalid_argument("rehearsal_pair_batch: augmentation 'none' mixes nothing");
  const auto partners = sample_memory_batch(mem, images.size(), rng);
  std::vector<MixedSample> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(mix_pair(images[i], labels[i], partners[i]->image, partners[i]->label, aug, alpha, rng));
  }
  return out;
}

std::vector<MixedSample> within_batch_mix(const std::vector<Tensor>& images, const std::vector<int>& labels,
                                          CompressAug aug, double alpha, Rng& rng) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::invalid_argument("within_batch_mix: batch must be non-empty with one label per image");
  }
  std::vector<std::size_t> perm(images.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<MixedSample> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(mix_pair(images[i], labels[i], images[perm[i]], labels[perm[i]], aug, alpha, rng));
  }
  return out;
}

}  // namespace fecil
