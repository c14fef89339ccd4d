#include "hkd/optim.hpp"

#include <algorithm>
#include <cmath>

namespace hkd {

void sgd_step(std::span<Tensor> params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) throw TapeError("sgd_step: parameter " + shape_str(p.shape()) + " has no gradient");
  }
  for (auto& p : params) {
    auto values = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * g[i];
    p.zero_grad();
  }
}

Sgd::Sgd(std::vector<Tensor> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr, double grad_scale) {
  if (momentum_ == 0.0 && grad_scale == 1.0) {
    sgd_step(params_, lr);
    return;
  }
  for (auto& p : params_) {
    if (!p.has_grad()) throw TapeError("Sgd::step: parameter " + shape_str(p.shape()) + " has no gradient");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto values = params_[k].mutable_data();
    auto g = params_[k].grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = momentum_ * v[i] + grad_scale * g[i];
      values[i] -= lr * v[i];
    }
    params_[k].zero_grad();
  }
}

double Sgd::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace hkd
