#pragma once

#include <string>
#include <vector>

#include "fecil/memory.hpp"
#include "fecil/rng.hpp"
#include "fecil/tensor.hpp"

namespace fecil {

enum class CompressAug { none, mixup, cutmix, r_mixup, r_cutmix };

std::string to_string(CompressAug aug);
CompressAug parse_compress_aug(const std::string& name);
inline bool is_rehearsal(CompressAug a) { return a == CompressAug::r_mixup || a == CompressAug::r_cutmix; }

/// Box centre and side lengths in pixels, before rounding and clipping.
struct Box {
  double cx = 0, cy = 0, rw = 0, rh = 0;
};

/// Integer pixel rectangle [x0, x1) x [y0, y1) after clipping to the image.
struct PixelRect {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  int area() const { return (x1 - x0) * (y1 - y0); }
};

/// One augmentation event.
struct MixPlan {
  double lambda_raw = 1.0;
  Box box;
  double lambda_eff = 1.0;
  std::size_t source_j = 0;
};

double sample_lambda(double alpha, Rng& rng);

Box sample_box(int width, int height, double lambda, Rng& rng);

/// Rounds the side lengths to whole pixels and clips to the image:
/// x0 = floor(cx - round(rw) / 2), x1 = x0 + round(rw), likewise for y.
PixelRect clip_box(const Box& box, int width, int height);

struct CutMixResult {
  Tensor image;
  double lambda_eff;
};

/// Images are [C, H, W]. Inside the clipped box the result takes x_j.
CutMixResult cutmix_apply(const Tensor& x_i, const Tensor& x_j, const Box& box);

Tensor mixup_apply(const Tensor& x_i, const Tensor& x_j, double lambda);

/// lambda * onehot(y_i) + (1 - lambda) * onehot(y_j) over `classes` entries.
std::vector<double> mixed_target(int y_i, int y_j, double lambda_eff, std::size_t classes);

struct MixedSample {
  Tensor image;
  int label_i;
  int label_j;
  double lambda_eff;
};

/// One memory partner per batch image, fresh lambda (and box for CutMix)
/// per pair; the output has the input's batch size and order.
std::vector<MixedSample> rehearsal_pair_batch(const std::vector<Tensor>& images, const std::vector<int>& labels,
                                              const ExemplarMemory& mem, CompressAug aug, double alpha, Rng& rng);

/// The non-rehearsal variants: each image is paired with a random batch
/// member via a shuffled permutation.
std::vector<MixedSample> within_batch_mix(const std::vector<Tensor>& images, const std::vector<int>& labels,
                                          CompressAug aug, double alpha, Rng& rng);

}  // namespace fecil
