#include "hkd/distill.hpp"

#include <stdexcept>
#include <vector>

#include "hkd/ops.hpp"

namespace hkd {

namespace {

void check_pairs(std::span<const Tensor> student, std::span<const Tensor> teacher, const char* what) {
  if (student.size() != teacher.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(student.size()) + " student vs " +
                     std::to_string(teacher.size()) + " teacher tensors");
  }
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (student[i].shape() != teacher[i].shape()) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(student[i].shape()) + " vs " +
                       shape_str(teacher[i].shape()));
    }
  }
}

// sum_i ||s_i - detach(t_i)||^2 / count
Tensor mean_sq_distance(std::span<const Tensor> student, std::span<const Tensor> teacher, double count) {
  std::vector<Tensor> terms;
  terms.reserve(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) terms.push_back(ops::sq_diff_sum(student[i], teacher[i].detach()));
  return ops::scale(ops::add_n(terms), 1.0 / count);
}

}  // namespace

void DistillConfig::validate() const {
  if (lambda_pd < 0 || lambda_rd < 0 || lambda_ld < 0) throw std::invalid_argument("distillation weights must be nonnegative");
}

std::string DistillConfig::flags_str() const {
  auto f = [](bool b) { return b ? "1" : "0"; };
  return std::string("PD=") + f(pd) + " RD=" + f(rd) + " LD=" + f(ld) + " PyRoIAlign=" + f(pyramid_roi_align);
}

Tensor pyramid_distill_loss(const FeaturePyramid& student, const FeaturePyramid& teacher) {
  std::span<const Tensor> s(student.levels), t(teacher.levels);
  check_pairs(s, t, "pyramid_distill_loss");
  double count = 0.0;
  for (const auto& level : s) count += static_cast<double>(level.numel());
  return mean_sq_distance(s, t, count);
}

Tensor region_distill_loss(std::span<const Tensor> student, std::span<const Tensor> teacher) {
  check_pairs(student, teacher, "region_distill_loss");
  double count = 0.0;
  for (const auto& r : student) count += static_cast<double>(r.numel());
  if (count == 0.0) return Tensor::scalar(0.0);
  return mean_sq_distance(student, teacher, count);
}

Tensor logit_distill_loss(std::span<const Tensor> student, std::span<const Tensor> teacher) {
  check_pairs(student, teacher, "logit_distill_loss");
  if (student.empty()) return Tensor::scalar(0.0);
  const auto width = student.front().shape().back();
  double proposals = 0.0;
  for (const auto& g : student) {
    if (g.shape().back() != width) throw ShapeError("logit_distill_loss: logit widths differ");
    proposals += static_cast<double>(g.numel() / width);
  }
  return mean_sq_distance(student, teacher, proposals * static_cast<double>(width));
}

std::pair<Tensor, DistillReport> total_distill_loss(const DistillConfig& cfg, const std::optional<Tensor>& pd,
                                                    const std::optional<Tensor>& rd, const std::optional<Tensor>& ld) {
  cfg.validate();
  DistillReport report;
  std::vector<Tensor> terms;
  auto use = [&](bool enabled, const std::optional<Tensor>& term, double lambda, double& slot) {
    if (!enabled || !term) return;
    slot = term->item();
    terms.push_back(ops::scale(*term, lambda));
    report.total += lambda * slot;
  };
  use(cfg.pd, pd, cfg.lambda_pd, report.pd);
  use(cfg.rd, rd, cfg.lambda_rd, report.rd);
  use(cfg.ld, ld, cfg.lambda_ld, report.ld);
  if (terms.empty()) return {Tensor::scalar(0.0), report};
  auto total = ops::add_n(terms);
  report.total = total.item();
  return {total, report};
}

}  // namespace hkd
