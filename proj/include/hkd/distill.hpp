#pragma once

#include <optional>
#include <span>
#include <string>

#include "hkd/pyramid.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

/// Weights and switches of the hierarchical distillation objective.
struct DistillConfig {
  double lambda_pd = 0.5;
  double lambda_rd = 30.0;
  double lambda_ld = 30.0;
  bool pd = true;
  bool rd = true;
  bool ld = true;
  bool pyramid_roi_align = true;

  bool any() const { return pd || rd || ld; }
  /// Throws std::invalid_argument on a negative weight.
  void validate() const;
  std::string flags_str() const;
};

struct DistillReport {
  double pd = 0.0;
  double rd = 0.0;
  double ld = 0.0;
  double total = 0.0;
};

/// sum over P2..P5 of ||Ps - Pt||^2, divided by the total element count of
/// the pyramid. The teacher side is detached.
Tensor pyramid_distill_loss(const FeaturePyramid& student, const FeaturePyramid& teacher);

/// Squared differences summed over all region features, divided by their
/// total element count. Empty lists give 0. Teacher side detached.
Tensor region_distill_loss(std::span<const Tensor> student, std::span<const Tensor> teacher);

/// Per proposal, the mean squared difference over the logit vector; then the
/// mean over proposals. Each tensor is [L] or [R, L]. Empty lists give 0.
Tensor logit_distill_loss(std::span<const Tensor> student, std::span<const Tensor> teacher);

/// lambda-weighted sum of the enabled terms. Disabled or absent terms
/// contribute exactly 0 and add nothing to the graph.
std::pair<Tensor, DistillReport> total_distill_loss(const DistillConfig& cfg, const std::optional<Tensor>& pd,
                                                    const std::optional<Tensor>& rd, const std::optional<Tensor>& ld);

}  // namespace hkd
