#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

struct GradcheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  double e2e_tolerance = 1e-3;
  std::size_t instances = 20;
  std::size_t e2e_image = 64;
  // Coordinates probed per input tensor; larger tensors are subsampled.
  std::size_t max_coords = 48;
  // Denominator floor of the relative error.
  double floor = 1e-6;
  std::uint64_t seed = 1;
};

struct GradcheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over the
/// probed coordinates of every input, using central differences.
double gradient_rel_error(const ScalarFn& fn, std::vector<Tensor> inputs, const GradcheckOptions& opts,
                          std::mt19937_64& rng);

/// One result per differentiable op, each over opts.instances random cases.
std::vector<GradcheckResult> run_op_gradchecks(const GradcheckOptions& opts = {});

/// Full detection loss (RPN + second stage) of a student network on a square
/// synthetic image, checked against the network parameters.
GradcheckResult run_end_to_end_gradcheck(const GradcheckOptions& opts = {});

}  // namespace hkd
