#include "fecil/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>

#include "fecil/rng.hpp"

namespace fecil {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

std::string hex_bytes(const std::vector<std::uint8_t>& b, std::size_t n) {
  std::string s;
  char buf[4];
  for (std::size_t i = 0; i < std::min(n, b.size()); ++i) {
    std::snprintf(buf, sizeof buf, "%02x", b[i]);
    if (i) s += ' ';
    s += buf;
  }
  return s;
}

void check_magic(const std::vector<std::uint8_t>& b, std::uint32_t expected, const std::filesystem::path& path) {
  if (b.size() < 4 || be32(b, 0) != expected) {
    char want[16];
    std::snprintf(want, sizeof want, "0x%08x", expected);
    throw FormatError(path.string() + ": bad IDX magic bytes [" + hex_bytes(b, 4) + "], expected " + want);
  }
}

}  // namespace

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.split = split;
  const std::size_t sz = image_size();
  out.images = Tensor(Shape{indices.size(), channels(), height(), width()});
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(image(indices[k]), sz, out.images.data() + k * sz);
    out.labels.push_back(labels.at(indices[k]));
  }
  return out;
}

LabeledDataset LabeledDataset::filter_classes(const std::vector<int>& classes) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::find(classes.begin(), classes.end(), labels[i]) != classes.end()) keep.push_back(i);
  }
  return subset(keep);
}

std::vector<std::size_t> LabeledDataset::indices_of(int class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] == class_id) out.push_back(i);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (images.rank() != 4 || images.shape()[0] != labels.size()) {
    throw FormatError("dataset: images " + shape_str(images.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw FormatError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  check_magic(ib, 0x00000803, images);
  check_magic(lb, 0x00000801, labels);
  if (ib.size() < 16) throw FormatError(images.string() + ": truncated IDX image header");
  if (lb.size() < 8) throw FormatError(labels.string() + ": truncated IDX label header");
  const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
  const std::size_t nl = be32(lb, 4);
  if (n != nl) {
    throw FormatError("IDX image/label count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) +
                      " labels");
  }
  if (ib.size() - 16 < n * rows * cols) {
    throw FormatError(images.string() + ": truncated payload, header declares " + std::to_string(n) + " images of " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (lb.size() - 8 < n) throw FormatError(labels.string() + ": truncated payload");

  LabeledDataset d;
  d.split = split;
  d.images = Tensor(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) d.images[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(lb[8 + i]);
    max_label = std::max(max_label, d.labels.back());
  }
  d.num_classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

LabeledDataset load_cifar_binary(const std::filesystem::path& path, bool fine_labels, Split split) {
  constexpr std::size_t kRecord = 3074, kPixels = 3072;
  const auto b = read_file(path);
  if (b.empty() || b.size() % kRecord != 0) {
    std::string hint;
    if (!b.empty() && b.size() % (kRecord - 1) == 0) hint = " (CIFAR-10 layout detected: 3073-byte records)";
    throw FormatError(path.string() + ": length " + std::to_string(b.size()) + " is not a multiple of 3074" + hint);
  }
  const std::size_t n = b.size() / kRecord;
  LabeledDataset d;
  d.split = split;
  d.num_classes = fine_labels ? 100 : 20;
  d.images = Tensor(Shape{n, 3, 32, 32});
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = b.data() + i * kRecord;
    const int label = fine_labels ? rec[1] : rec[0];
    if (label >= 100) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + " has label " + std::to_string(label) +
                        " >= 100");
    }
    if (static_cast<std::size_t>(label) >= d.num_classes) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + " coarse label " + std::to_string(label) +
                        " >= 20");
    }
    d.labels.push_back(label);
    for (std::size_t p = 0; p < kPixels; ++p) d.images[i * kPixels + p] = static_cast<float>(rec[2 + p]) / 255.0f;
  }
  return d;
}

TrainTestPair synth_gaussians(std::size_t num_classes, std::size_t per_class_train, std::size_t per_class_test,
                              std::size_t image_side, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synth_gaussians: need at least 2 classes");
  if (per_class_train < 2 || per_class_test < 2) throw std::invalid_argument("synth_gaussians: per_class must be >= 2");
  if (image_side < 4) throw std::invalid_argument("synth_gaussians: image_side must be >= 4");

  const double side = static_cast<double>(image_side);
  const double ring = 0.3 * side;
  const double sigma_major = 0.16 * side, sigma_minor = 0.07 * side;
  const double jitter = 0.03 * side;
  const double sigma_distractor = 0.1 * side;

  auto render = [&](std::size_t per_class, Split split) {
    LabeledDataset d;
    d.split = split;
    d.num_classes = num_classes;
    d.images = Tensor(Shape{num_classes * per_class, 1, image_side, image_side});
    Rng rng = substream(seed, {split == Split::train ? 1u : 2u});
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::size_t idx = 0;
    // Interleave classes so any prefix is balanced.
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t c = 0; c < num_classes; ++c, ++idx) {
        const double theta = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
        const double cx = side / 2.0 + ring * std::cos(theta) + jitter * gauss(rng);
        const double cy = side / 2.0 + ring * std::sin(theta) + jitter * gauss(rng);
        const double phi = std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes) + 0.1 * gauss(rng);
        // Nuisance factors: none of these depend on the class.
        const double scale = 0.75 + 0.5 * unit(rng);
        const double a = 0.5 + 0.5 * unit(rng);
        const double background = 0.2 * unit(rng);
        const double qx = side * unit(rng), qy = side * unit(rng);
        const double qa = 0.3 + 0.5 * unit(rng);
        const double su = sigma_major * scale, sv = sigma_minor * scale;
        const double cp = std::cos(phi), sp = std::sin(phi);
        float* img = d.images.data() + idx * image_side * image_side;
        for (std::size_t y = 0; y < image_side; ++y) {
          for (std::size_t x = 0; x < image_side; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double dx = px - cx, dy = py - cy;
            const double u = cp * dx + sp * dy, v = -sp * dx + cp * dy;
            const double blob = std::exp(-0.5 * (u * u / (su * su) + v * v / (sv * sv)));
            const double rq = ((px - qx) * (px - qx) + (py - qy) * (py - qy)) / (sigma_distractor * sigma_distractor);
            const double value = background + a * blob + qa * std::exp(-0.5 * rq) + 0.1 * gauss(rng);
            img[y * image_side + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
          }
        }
        d.labels.push_back(static_cast<int>(c));
      }
    }
    return d;
  };
  return TrainTestPair{render(per_class_train, Split::train), render(per_class_test, Split::test)};
}

Normalization compute_normalization(const LabeledDataset& data) {
  const std::size_t c = data.channels(), plane = data.height() * data.width();
  Normalization norm{std::vector<float>(c), std::vector<float>(c)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float* p = data.image(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        s += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
      count += plane;
    }
    const double mu = s / static_cast<double>(count);
    const double var = std::max(sq / static_cast<double>(count) - mu * mu, 1e-12);
    norm.mean[ch] = static_cast<float>(mu);
    norm.stddev[ch] = static_cast<float>(std::sqrt(var));
  }
  return norm;
}

void normalize_in_place(Tensor& images, const Normalization& norm) {
  if (images.rank() != 4 || images.shape()[1] != norm.mean.size()) {
    throw ShapeError("normalize: images " + shape_str(images.shape()) + " vs " + std::to_string(norm.mean.size()) +
                     " channel statistics");
  }
  const std::size_t n = images.shape()[0], c = images.shape()[1], plane = images.shape()[2] * images.shape()[3];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = images.data() + (i * c + ch) * plane;
      const float mu = norm.mean[ch], inv = 1.0f / norm.stddev[ch];
      for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - mu) * inv;
    }
  }
}

}  // namespace fecil
