#include "fecil/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fecil {

double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs < 1) throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
  if (epoch < 0 || epoch > total_epochs) {
    throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(total_epochs) + "]");
  }
  if (epoch == total_epochs) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

template <typename T>
void sgd_momentum_step(BasicTensor<T>& param, const BasicTensor<T>& grad, BasicTensor<T>& velocity, double momentum,
                       double weight_decay, double lr) {
  if (lr < 0.0) throw std::invalid_argument("sgd_momentum_step: negative learning rate");
  if (grad.shape() != param.shape() || velocity.shape() != param.shape()) {
    throw ShapeError("sgd_momentum_step: param " + shape_str(param.shape()) + ", grad " + shape_str(grad.shape()) +
                     ", velocity " + shape_str(velocity.shape()));
  }
  const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + wd * param[i];
    velocity[i] = mu * velocity[i] + g;
    param[i] -= step * velocity[i];
  }
}

template void sgd_momentum_step<float>(Tensor&, const Tensor&, Tensor&, double, double, double);
template void sgd_momentum_step<double>(TensorD&, const TensorD&, TensorD&, double, double, double);

SgdMomentum::SgdMomentum(std::vector<Var<float>> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocities_.reserve(params_.size());
  for (const auto& p : params_) velocities_.emplace_back(p.shape(), 0.0f);
}

void SgdMomentum::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.requires_grad() || !p.grad()) continue;
    sgd_momentum_step(p.mutable_value(), *p.grad(), velocities_[i], momentum_, weight_decay_, lr);
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace fecil
