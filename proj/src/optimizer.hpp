#pragma once

#include <vector>

#include "tensor.hpp"

namespace exacfs {

// SGD with classical momentum and decoupled-from-nothing L2 weight decay;
// the decay term joins the gradient before the momentum update.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<ad::Tensor> params, double lr, double momentum, double weight_decay);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad();
  void step();

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace exacfs
