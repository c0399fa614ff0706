#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fecil/errors.hpp"
#include "fecil/tensor.hpp"

namespace fecil {

enum class Split { train, test };

/// Images [n, C, H, W] with values in [0, 1] and one class id per image.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.shape()[1]; }
  std::size_t height() const { return images.shape()[2]; }
  std::size_t width() const { return images.shape()[3]; }
  std::size_t image_size() const { return channels() * height() * width(); }
  const float* image(std::size_t i) const { return images.data() + i * image_size(); }

  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
  /// Samples whose label is in `classes`, keeping dataset order.
  LabeledDataset filter_classes(const std::vector<int>& classes) const;
  std::vector<std::size_t> indices_of(int class_id) const;
  void validate() const;
};

/// IDX pair: images (magic 0x00000803, u8 pixels) and labels (0x00000801).
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        Split split = Split::train);

/// CIFAR-100 binary: 3074-byte records of coarse label, fine label and
/// 3072 channel-planar RGB bytes.
LabeledDataset load_cifar_binary(const std::filesystem::path& path, bool fine_labels, Split split = Split::train);

struct TrainTestPair {
  LabeledDataset train;
  LabeledDataset test;
};

/// Class c is an oriented Gaussian blob at a class-specific position on a
/// ring around the image centre, with per-sample jitter and pixel noise 0.1.
TrainTestPair synth_gaussians(std::size_t num_classes, std::size_t per_class_train, std::size_t per_class_test,
                              std::size_t image_side, std::uint64_t seed);

/// Per-channel input normalization, frozen after the first task.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

Normalization compute_normalization(const LabeledDataset& data);

/// Normalizes images [n, C, H, W] in place.
void normalize_in_place(Tensor& images, const Normalization& norm);

}  // namespace fecil
