#pragma once

#include <vector>

#include "fecil/autograd.hpp"

namespace fecil {

inline constexpr double kDefaultMomentum = 0.9;
inline constexpr double kDefaultWeightDecay = 5e-4;

/// base_lr * (1 + cos(pi * epoch / total_epochs)) / 2.
double cosine_lr(int epoch, int total_epochs, double base_lr);

/// One SGD step with coupled L2 decay on a single parameter buffer:
///   g' = g + wd * p;  v = momentum * v + g';  p -= lr * v
template <typename T>
void sgd_momentum_step(BasicTensor<T>& param, const BasicTensor<T>& grad, BasicTensor<T>& velocity, double momentum,
                       double weight_decay, double lr);

/// Velocity buffers for a fixed parameter list. Parameters that do not
/// require a gradient, or received none this step, are left untouched.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Var<float>> params, double momentum = kDefaultMomentum,
              double weight_decay = kDefaultWeightDecay);

  void step(double lr);
  void zero_grad();

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  const std::vector<Tensor>& velocities() const { return velocities_; }

 private:
  std::vector<Var<float>> params_;
  std::vector<Tensor> velocities_;
  double momentum_;
  double weight_decay_;
};

}  // namespace fecil
