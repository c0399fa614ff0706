#pragma once

#include <span>

#include "fecil/autograd.hpp"

// Differentiable primitives. Image tensors are [N, C, H, W].
namespace fecil::ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> sum(const Var<T>& a);

template <typename T>
Var<T> relu(const Var<T>& x);

/// y = x W^T + b with x [B, in], W [out, in], b [out] (b may be undefined).
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Cross-correlation with square kernels, weight [O, C, K, K], no bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride, int pad);

enum class BnMode { train, eval };

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <typename T>
struct BatchNormStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;

  explicit BatchNormStats(std::size_t channels = 0)
      : mean(Shape{channels}, T{0}), var(Shape{channels}, T{1}) {}
};

/// Per-channel normalization over every axis but 1. Train mode without
/// frozen stats normalizes by batch moments and updates `stats`; eval mode
/// or frozen stats normalize by `stats` and leave them untouched.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                 BnMode mode, bool frozen_stats);

template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

template <typename T>
Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  std::vector<Var<T>> v(parts);
  return concat<T>(std::span<const Var<T>>(v), axis);
}

}  // namespace fecil::ops
