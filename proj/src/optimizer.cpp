#include "optimizer.hpp"

namespace exacfs {

SgdMomentum::SgdMomentum(std::vector<ad::Tensor> params, double lr, double momentum,
                         double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const ad::Tensor& p : params_) {
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdMomentum::zero_grad() {
  for (ad::Tensor& p : params_) p.zero_grad();
}

void SgdMomentum::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Tensor& p = params_[k];
    auto value = p.mutable_data();
    const auto grad = p.grad();
    std::vector<double>& vel = velocity_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i]) + weight_decay_ * value[i];
      vel[i] = momentum_ * vel[i] - lr_ * g;
      value[i] += vel[i];
    }
  }
}

}  // namespace exacfs
