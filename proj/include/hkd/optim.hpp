#pragma once

#include <span>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

/// Plain SGD: param <- param - lr * grad, then the grad is zeroed.
/// Every param must hold a gradient (TapeError otherwise).
void sgd_step(std::span<Tensor> params, double lr);

/// SGD with an optional heavy-ball momentum term (v <- m*v + g; p <- p - lr*v).
/// momentum = 0 reduces exactly to sgd_step.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum);

  /// grad_scale multiplies every gradient before the update (used for norm clipping).
  void step(double lr, double grad_scale = 1.0);
  void zero_grad();
  /// Global L2 norm over all parameter gradients.
  double grad_norm() const;
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

}  // namespace hkd
