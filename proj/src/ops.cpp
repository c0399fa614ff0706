#include "fecil/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace fecil {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace fecil

namespace fecil::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> as_matrix(const BasicTensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_matrix(BasicTensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

template <typename T>
bool wants_grad(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, ho, wo;
  int stride, pad;
  std::size_t patch() const { return c * k * k; }
  std::size_t columns() const { return n * ho * wo; }
};

// Output columns [lo, hi) whose input column ow*stride - pad + kj lies inside the image.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  const long off = static_cast<long>(kj) - g.pad, s = g.stride, w = static_cast<long>(g.w);
  const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const long hi = std::min<long>(static_cast<long>(g.wo), off >= w ? 0 : (w - 1 - off) / s + 1);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

// `cols` must arrive zeroed; padding entries are never written.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = g.columns();
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((ci * g.k + ki) * g.k + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* src = x + (n * g.c + ci) * g.h * g.w;
          T* dst = row + n * plane;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(ki);
            T* drow = dst + oh * g.wo;
            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
            const T* srow = src + static_cast<std::size_t>(ih) * g.w;
            const auto [lo, hi] = valid_columns(g, kj);
            const T* s0 = srow + (static_cast<long>(lo) * g.stride - g.pad + static_cast<long>(kj));
            if (g.stride == 1) {
              std::copy(s0, s0 + (hi - lo), drow + lo);
            } else {
              for (std::size_t ow = lo; ow < hi; ++ow) drow[ow] = s0[(ow - lo) * g.stride];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t ncols = g.columns();
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((ci * g.k + ki) * g.k + kj) * ncols;
        for (std::size_t n = 0; n < g.n; ++n) {
          T* dst = dx + (n * g.c + ci) * g.h * g.w;
          const T* src = row + n * plane;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(ki);
            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
            T* drow = dst + static_cast<std::size_t>(ih) * g.w;
            const T* srow = src + oh * g.wo;
            const auto [lo, hi] = valid_columns(g, kj);
            T* d0 = drow + (static_cast<long>(lo) * g.stride - g.pad + static_cast<long>(kj));
            for (std::size_t ow = lo; ow < hi; ++ow) d0[(ow - lo) * g.stride] += srow[ow];
          }
        }
      }
    }
  }
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  BasicTensor<T> out = a.value();
  const T* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*self.grad)[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return make_op<T>(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * (*self.grad)[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().values()) total += v;
  return make_op<T>(BasicTensor<T>(Shape{1}, total), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = (*self.grad)[0];
    for (auto& v : g.values()) v += up;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    const T* up = self.grad->data();
    const T* yv = y.data();
    T* gv = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += yv[i] > T{0} ? up[i] : T{0};
  });
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "dense input");
  require_rank(weight.shape(), 2, "dense weight");
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  if (weight.shape()[1] != in) {
    throw ShapeError("dense: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out_dim}) {
    throw ShapeError("dense: bias shape " + shape_str(bias.shape()) + " expected [" + std::to_string(out_dim) + "]");
  }
  BasicTensor<T> out(Shape{batch, out_dim});
  auto y = as_matrix(out, batch, out_dim);
  y.noalias() = as_matrix(x.value(), batch, in) * as_matrix(weight.value(), out_dim, in).transpose();
  if (has_bias) {
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t c = 0; c < out_dim; ++c) out.at(r, c) += bias.value()[c];
    }
  }
  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents), [batch, in, out_dim](Node<T>& self) {
    auto dy = as_matrix(std::as_const(*self.grad), batch, out_dim);
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (wants_grad(self, 0)) {
      as_matrix(self.parents[0]->grad_buffer(), batch, in).noalias() += dy * as_matrix(wv, out_dim, in);
    }
    if (wants_grad(self, 1)) {
      as_matrix(self.parents[1]->grad_buffer(), out_dim, in).noalias() += dy.transpose() * as_matrix(xv, batch, in);
    }
    if (self.parents.size() > 2 && wants_grad(self, 2)) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < out_dim; ++c) gb[c] += (*self.grad).at(r, c);
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride, int pad) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3]) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, stride, pad};
  if (g.h + 2 * static_cast<std::size_t>(pad) < g.k || g.w + 2 * static_cast<std::size_t>(pad) < g.k) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(xs));
  }
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;

  BasicTensor<T> cols(Shape{g.patch(), g.columns()});
  im2col(x.value().data(), g, cols.data());
  RowMat<T> y = as_matrix(weight.value(), g.o, g.patch()) * as_matrix(cols, g.patch(), g.columns());

  const std::size_t plane = g.ho * g.wo;
  BasicTensor<T> out(Shape{g.n, g.o, g.ho, g.wo});
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      std::copy_n(y.data() + o * g.columns() + n * plane, plane, out.data() + (n * g.o + o) * plane);
    }
  }
  if (!grad_enabled() || !(x.requires_grad() || weight.requires_grad())) {
    return make_op<T>(std::move(out), {x, weight}, nullptr);
  }
  return make_op<T>(std::move(out), {x, weight}, [g, cols = std::move(cols)](Node<T>& self) {
    const std::size_t plane = g.ho * g.wo;
    RowMat<T> dy(static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.columns()));
    const T* up = self.grad->data();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.o; ++o) {
        std::copy_n(up + (n * g.o + o) * plane, plane, dy.data() + o * g.columns() + n * plane);
      }
    }
    if (wants_grad(self, 1)) {
      as_matrix(self.parents[1]->grad_buffer(), g.o, g.patch()).noalias() +=
          dy * as_matrix(cols, g.patch(), g.columns()).transpose();
    }
    if (wants_grad(self, 0)) {
      RowMat<T> dcols = as_matrix(self.parents[1]->value, g.o, g.patch()).transpose() * dy;
      col2im(dcols.data(), g, self.parents[0]->grad_buffer().data());
    }
  });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                 BnMode mode, bool frozen_stats) {
  const auto& xs = x.shape();
  if (xs.size() != 2 && xs.size() != 4) throw ShapeError("batchnorm: expected [N,C] or [N,C,H,W], got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1];
  const std::size_t spatial = xs.size() == 4 ? xs[2] * xs[3] : 1;
  const Shape cshape{c};
  if (gamma.shape() != cshape || beta.shape() != cshape || stats.mean.shape() != cshape ||
      stats.var.shape() != cshape) {
    throw ShapeError("batchnorm: per-channel parameters must have shape " + shape_str(cshape));
  }
  const bool use_batch = mode == BnMode::train && !frozen_stats;
  const std::size_t count = n * spatial;
  if (use_batch && count < 2) throw ShapeError("batchnorm: batch statistics need at least 2 values per channel");

  const T eps = static_cast<T>(kBnEpsilon);
  std::vector<T> mean(c), inv_std(c);
  const T* xv = x.value().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (use_batch) {
      double s = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv + (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv + (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) sq += (p[j] - mu) * (p[j] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + kBnEpsilon));
      const double unbiased = sq / static_cast<double>(count - 1);
      stats.mean[ch] = static_cast<T>((1.0 - kBnMomentum) * stats.mean[ch] + kBnMomentum * mu);
      stats.var[ch] = static_cast<T>((1.0 - kBnMomentum) * stats.var[ch] + kBnMomentum * unbiased);
    } else {
      mean[ch] = stats.mean[ch];
      inv_std[ch] = T{1} / std::sqrt(stats.var[ch] + eps);
    }
  }

  BasicTensor<T> xhat(xs);
  BasicTensor<T> out(xs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * spatial;
      const T gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::size_t j = 0; j < spatial; ++j) {
        const T h = (xv[base + j] - mean[ch]) * inv_std[ch];
        xhat[base + j] = h;
        out[base + j] = gm * h + bt;
      }
    }
  }
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [n, c, spatial, use_batch, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    const auto& dy = *self.grad;
    const auto& gm = self.parents[1]->value;
    std::vector<T> sum_dy(c, T{0}), sum_dy_xhat(c, T{0});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (i * c + ch) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) {
          sum_dy[ch] += dy[base + j];
          sum_dy_xhat[ch] += dy[base + j] * xhat[base + j];
        }
      }
    }
    if (wants_grad(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
    }
    if (wants_grad(self, 2)) {
      auto& g = self.parents[2]->grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
    }
    if (!wants_grad(self, 0)) return;
    auto& dx = self.parents[0]->grad_buffer();
    const T m = static_cast<T>(n * spatial);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (i * c + ch) * spatial;
        const T k = gm[ch] * inv_std[ch];
        if (use_batch) {
          const T mdy = sum_dy[ch] / m, mdyx = sum_dy_xhat[ch] / m;
          for (std::size_t j = 0; j < spatial; ++j) {
            dx[base + j] += k * (dy[base + j] - mdy - xhat[base + j] * mdyx);
          }
        } else {
          for (std::size_t j = 0; j < spatial; ++j) dx[base + j] += k * dy[base + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.shape()[0], c = x.shape()[1], spatial = x.shape()[2] * x.shape()[3];
  BasicTensor<T> out(Shape{n, c});
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < n * c; ++i) {
    T s{0};
    for (std::size_t j = 0; j < spatial; ++j) s += xv[i * spatial + j];
    out[i] = s / static_cast<T>(spatial);
  }
  return make_op<T>(std::move(out), {x}, [n, c, spatial](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T inv = T{1} / static_cast<T>(spatial);
    for (std::size_t i = 0; i < n * c; ++i) {
      const T up = (*self.grad)[i] * inv;
      for (std::size_t j = 0; j < spatial; ++j) g[i * spatial + j] += up;
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(out_shape));
  std::size_t extent = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == out_shape.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == out_shape[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(out_shape) + " and " + shape_str(s));
    extent += s[axis];
  }
  out_shape[axis] = extent;
  BasicTensor<T> out(out_shape);
  const AxisSplit whole = split_axis(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const AxisSplit s = split_axis(p.shape(), axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.value().data() + o * s.extent * s.inner, s.extent * s.inner,
                  out.data() + (o * whole.extent + offset) * whole.inner);
    }
    offsets.push_back(offset);
    offset += s.extent;
  }
  std::vector<Var<T>> parents(parts.begin(), parts.end());
  return make_op<T>(std::move(out), std::move(parents), [whole, offsets, axis](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = self.parents[p]->grad_buffer();
      const AxisSplit s = split_axis(g.shape(), axis);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* src = self.grad->data() + (o * whole.extent + offsets[p]) * whole.inner;
        T* dst = g.data() + o * s.extent * s.inner;
        for (std::size_t i = 0; i < s.extent * s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

#define FECIL_INSTANTIATE_OPS(T)                                                                     \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale<T>(const Var<T>&, T);                                                         \
  template Var<T> sum<T>(const Var<T>&);                                                              \
  template Var<T> relu<T>(const Var<T>&);                                                             \
  template Var<T> dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, int, int);                                  \
  template Var<T> batchnorm<T>(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&, BnMode, \
                               bool);                                                                 \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                                  \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);

FECIL_INSTANTIATE_OPS(float)
FECIL_INSTANTIATE_OPS(double)

}  // namespace fecil::ops
