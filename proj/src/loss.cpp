#include "fecil/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fecil {

namespace {

void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2) throw ShapeError(std::string(what) + ": expected [B, C], got " + shape_str(s));
  if (s[0] == 0) throw ShapeError(std::string(what) + ": empty batch");
  if (s[1] == 0) throw ShapeError(std::string(what) + ": empty logits");
}

// log softmax of one row of `z` scaled by 1/tau, written to `out`.
template <typename T>
void log_softmax_row(const T* z, std::size_t c, T tau, T* out) {
  T mx = z[0] / tau;
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j] / tau);
  T s{0};
  for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] / tau - mx);
  const T lse = mx + std::log(s);
  for (std::size_t j = 0; j < c; ++j) out[j] = z[j] / tau - lse;
}

}  // namespace

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const BasicTensor<T>& targets) {
  require_matrix(logits.shape(), "softmax_cross_entropy");
  if (targets.shape() != logits.shape()) {
    throw ShapeError("softmax_cross_entropy: targets " + shape_str(targets.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row += targets.at(i, j);
    if (std::abs(row - 1.0) > 1e-6) {
      throw std::invalid_argument("softmax_cross_entropy: target row " + std::to_string(i) + " sums to " +
                                  std::to_string(row));
    }
  }
  BasicTensor<T> probs(Shape{b, c});
  double loss = 0.0;
  std::vector<T> lsm(c);
  for (std::size_t i = 0; i < b; ++i) {
    log_softmax_row(logits.value().data() + i * c, c, T{1}, lsm.data());
    for (std::size_t j = 0; j < c; ++j) {
      loss -= targets.at(i, j) * lsm[j];
      probs.at(i, j) = std::exp(lsm[j]);
    }
  }
  loss /= static_cast<double>(b);
  BasicTensor<T> out(Shape{1}, static_cast<T>(loss));
  require_finite(out, "softmax_cross_entropy");
  return make_op<T>(std::move(out), {logits}, [b, c, probs = std::move(probs), targets](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T k = (*self.grad)[0] / static_cast<T>(b);
    for (std::size_t i = 0; i < b * c; ++i) g[i] += k * (probs[i] - targets[i]);
  });
}

template <typename T>
BasicTensor<T> softened_softmax(const BasicTensor<T>& logits, T tau) {
  if (!(tau > T{0})) throw std::invalid_argument("softened_softmax: tau must be positive");
  require_matrix(logits.shape(), "softened_softmax");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  BasicTensor<T> out(logits.shape());
  for (std::size_t i = 0; i < b; ++i) {
    log_softmax_row(logits.data() + i * c, c, tau, out.data() + i * c);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = std::exp(out.at(i, j));
  }
  return out;
}

template <typename T>
Var<T> distillation_loss(const Var<T>& student_logits, const BasicTensor<T>& teacher_logits, T tau) {
  if (!(tau > T{0})) throw std::invalid_argument("distillation_loss: tau must be positive");
  require_matrix(student_logits.shape(), "distillation_loss");
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("distillation_loss: teacher " + shape_str(teacher_logits.shape()) + " vs student " +
                     shape_str(student_logits.shape()));
  }
  const std::size_t b = student_logits.shape()[0], c = student_logits.shape()[1];
  BasicTensor<T> q_teacher = softened_softmax(teacher_logits, tau);
  BasicTensor<T> q_student(Shape{b, c});
  std::vector<T> lsm(c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    log_softmax_row(student_logits.value().data() + i * c, c, tau, lsm.data());
    for (std::size_t j = 0; j < c; ++j) {
      loss -= q_teacher.at(i, j) * lsm[j];
      q_student.at(i, j) = std::exp(lsm[j]);
    }
  }
  loss /= static_cast<double>(b);
  BasicTensor<T> out(Shape{1}, static_cast<T>(loss));
  require_finite(out, "distillation_loss");
  return make_op<T>(std::move(out), {student_logits},
                    [b, c, tau, q_student = std::move(q_student), q_teacher = std::move(q_teacher)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T k = (*self.grad)[0] / (static_cast<T>(b) * tau);
    for (std::size_t i = 0; i < b * c; ++i) g[i] += k * (q_student[i] - q_teacher[i]);
  });
}

template <typename T>
T mean_entropy(const BasicTensor<T>& probabilities) {
  require_matrix(probabilities.shape(), "mean_entropy");
  const std::size_t b = probabilities.shape()[0], c = probabilities.shape()[1];
  double h = 0.0;
  for (std::size_t i = 0; i < b * c; ++i) {
    const double p = probabilities[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return static_cast<T>(h / static_cast<double>(b));
}

template <typename T>
BasicTensor<T> one_hot(const std::vector<int>& indices, std::size_t classes) {
  BasicTensor<T> out(Shape{indices.size(), classes});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= classes) {
      throw std::out_of_range("one_hot: index " + std::to_string(indices[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    out.at(i, static_cast<std::size_t>(indices[i])) = T{1};
  }
  return out;
}

#define FECIL_INSTANTIATE_LOSS(T)                                                        \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> softened_softmax<T>(const BasicTensor<T>&, T);                 \
  template Var<T> distillation_loss<T>(const Var<T>&, const BasicTensor<T>&, T);         \
  template T mean_entropy<T>(const BasicTensor<T>&);                                     \
  template BasicTensor<T> one_hot<T>(const std::vector<int>&, std::size_t);

FECIL_INSTANTIATE_LOSS(float)
FECIL_INSTANTIATE_LOSS(double)

}  // namespace fecil
