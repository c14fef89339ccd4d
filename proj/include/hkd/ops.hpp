#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum of a list of scalars.
Tensor add_n(std::span<const Tensor> terms);

Tensor reshape(const Tensor& a, Shape shape);
/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& a);

Tensor relu(const Tensor& a);

/// 2x2 window, stride 2 over [N,C,H,W]; H and W must be even. On ties the
/// first maximal element in row-major window order takes the gradient.
Tensor maxpool2x2(const Tensor& a);

/// Nearest-neighbour 2x upsampling of [N,C,H,W].
Tensor upsample2x(const Tensor& a);

/// Concatenation along `axis`; all other dimensions must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

/// Cross-correlation of input [N,C,H,W] with weight [K,C,kh,kw] plus bias [K].
/// Kernel sizes must be odd and (H + 2*pad - kh) divisible by stride.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);

/// input [N,D] x weight [D,M] + bias [M].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Bilinear interpolation of feature [C,H,W] at continuous (x, y); coordinates
/// are clamped into [0,W-1] x [0,H-1]. Returns [C].
Tensor bilinear_sample(const Tensor& feature, double x, double y);

/// Mean over rows of -log softmax(logits[i])[labels[i]]. logits is [N,K].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// sum_i w_i * BCE(sigmoid(logits_i), targets_i), computed stably from logits.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets, std::span<const double> weights);

/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Sum of squared differences.
Tensor sq_diff_sum(const Tensor& a, const Tensor& b);

/// sum_i w_i * smoothL1(pred_i - target_i) with smoothL1(x) = 0.5x^2 for |x|<1, |x|-0.5 otherwise.
Tensor smooth_l1(const Tensor& pred, std::span<const double> targets, std::span<const double> weights);

/// Row-wise softmax values (no gradient).
std::vector<double> softmax_rows(const Tensor& logits);

double smooth_l1_value(double x);

namespace detail {

/// The four taps of a clamped bilinear sample on an H x W grid.
struct BilinearTaps {
  std::array<std::size_t, 4> index;  // flat y*W + x offsets
  std::array<double, 4> weight;
};

BilinearTaps bilinear_taps(std::size_t height, std::size_t width, double y, double x);

}  // namespace detail

}  // namespace hkd::ops
