#pragma once

#include "fecil/autograd.hpp"

namespace fecil {

/// Mean over the batch of -sum_c targets[i,c] * log softmax(logits)[i,c].
/// Each target row must sum to 1 within 1e-6.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const BasicTensor<T>& targets);

/// Row-wise softmax of logits / tau.
template <typename T>
BasicTensor<T> softened_softmax(const BasicTensor<T>& logits, T tau);

/// Mean over the batch of -sum_c q_teacher,c * log q_student,c with both
/// distributions softened by tau. Teacher logits are constants.
template <typename T>
Var<T> distillation_loss(const Var<T>& student_logits, const BasicTensor<T>& teacher_logits, T tau);

/// Row-wise Shannon entropy, averaged over rows.
template <typename T>
T mean_entropy(const BasicTensor<T>& probabilities);

/// One-hot rows [n, classes] from row indices.
template <typename T>
BasicTensor<T> one_hot(const std::vector<int>& indices, std::size_t classes);

}  // namespace fecil
