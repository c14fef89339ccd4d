#include "hkd/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "hkd/ops.hpp"
#include "hkd/optim.hpp"

namespace hkd {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (base_lr < 0 || lr_decay_factor < 0) throw std::invalid_argument("learning rate and decay factor must be nonnegative");
  if (!std::is_sorted(lr_decay_epochs.begin(), lr_decay_epochs.end())) {
    throw std::invalid_argument("train.lr_decay_epochs must be sorted ascending");
  }
  for (int e : lr_decay_epochs) {
    if (e < 1 || e > epochs) throw std::invalid_argument("train.lr_decay_epochs must lie within [1, epochs]");
  }
  if (flip_prob < 0 || flip_prob > 1) throw std::invalid_argument("train.flip_prob must lie in [0,1]");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train.momentum must lie in [0,1)");
  if (max_grad_norm < 0) throw std::invalid_argument("train.max_grad_norm must be nonnegative");
  if (warmup_factor <= 0 || warmup_factor > 1) throw std::invalid_argument("train.warmup_factor must lie in (0,1]");
  distill.validate();
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  const auto decays = std::count_if(cfg.lr_decay_epochs.begin(), cfg.lr_decay_epochs.end(), [&](int e) { return e <= epoch; });
  return cfg.base_lr * std::pow(cfg.lr_decay_factor, static_cast<double>(decays));
}

std::pair<Tensor, std::vector<GTBox>> horizontal_flip(const Tensor& image, std::span<const GTBox> boxes) {
  if (image.rank() < 2) throw ShapeError("horizontal_flip: image needs a width axis");
  const auto w = image.shape().back();
  const auto rows = image.numel() / w;
  std::vector<double> out(image.numel());
  auto src = image.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = src[r * w + (w - 1 - x)];
  }
  const double W = static_cast<double>(w);
  std::vector<GTBox> flipped(boxes.begin(), boxes.end());
  for (auto& g : flipped) {
    const double x1 = W - g.box.x2, x2 = W - g.box.x1;
    g.box.x1 = x1;
    g.box.x2 = x2;
  }
  return {Tensor::from(image.shape(), std::move(out)), std::move(flipped)};
}

bool StepRecord::operator==(const StepRecord& o) const {
  return epoch == o.epoch && step == o.step && lr == o.lr && grad_norm == o.grad_norm && detection_loss == o.detection_loss &&
         rpn_loss == o.rpn_loss && distill.pd == o.distill.pd && distill.rd == o.distill.rd &&
         distill.ld == o.distill.ld && distill.total == o.distill.total && total_loss == o.total_loss;
}

std::uint64_t init_seed(std::uint64_t run_seed, Role role) {
  return derive_seed(run_seed, role == Role::teacher ? 11 : 12, 0);
}

TrainResult train_detector(const NetConfig& net_cfg, std::span<const Scene> scenes, const TrainConfig& cfg,
                           const Detector* teacher, const StepCallback& on_step) {
  cfg.validate();
  net_cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("training set is empty");
  const auto& dc = cfg.distill;
  const bool distilling = teacher != nullptr && dc.any();
  if (teacher) {
    const auto& tc = teacher->config();
    if (tc.pyramid_width != net_cfg.pyramid_width) {
      throw std::invalid_argument("teacher pyramid width " + std::to_string(tc.pyramid_width) +
                                  " differs from student width " + std::to_string(net_cfg.pyramid_width));
    }
    if (dc.ld && tc.logit_width != net_cfg.logit_width) {
      throw std::invalid_argument("teacher and student logit widths differ");
    }
  }

  TrainResult result{Detector(net_cfg, init_seed(cfg.seed, net_cfg.role)), {}, {}};
  auto& model = result.model;
  Sgd optimizer(model.params().tensors(), cfg.momentum);
  std::mt19937_64 rng(derive_seed(cfg.seed, 7, 0));
  std::bernoulli_distribution flip(cfg.flip_prob);

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    EpochSummary summary{epoch, lr, 0, 0, 0};
    for (auto idx : order) {
      const auto& scene = scenes[idx];
      auto image = image_tensor(scene.image, scene.height, scene.width);
      std::vector<GTBox> gts = scene.annotations;
      if (flip(rng)) std::tie(image, gts) = horizontal_flip(image, gts);
      std::vector<Box> gt_boxes;
      for (const auto& g : gts) gt_boxes.push_back(g.box);
      const auto anchors = make_anchors(scene.height, scene.width);

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = global_step++;
      rec.lr = lr;
      if (rec.step < cfg.warmup_steps) {
        const double t = static_cast<double>(rec.step) / static_cast<double>(cfg.warmup_steps);
        rec.lr = lr * (cfg.warmup_factor + (1.0 - cfg.warmup_factor) * t);
      }
      try {
        const auto spyr = model.fpn(model.backbone(image));
        const auto rpn = model.rpn(spyr);
        auto l_rpn = rpn_loss(rpn, anchors, gt_boxes, &rng, cfg.rpn_sampling);
        const auto proposals = generate_proposals(rpn, anchors, cfg.proposals, static_cast<double>(scene.width),
                                                  static_cast<double>(scene.height));
        const auto sample = sample_rois(proposals, gt_boxes, rng, cfg.roi_sampling);
        const auto regions = model.regions(spyr, sample.boxes);
        const auto head = model.head(regions);
        auto l_det = detection_loss(head.class_scores, head.box_deltas, sample.labels, sample.targets);

        std::vector<Tensor> terms{l_det, l_rpn};
        if (distilling) {
          std::optional<Tensor> pd, rd, ld;
          FeaturePyramid tpyr;
          Tensor t_regions_rd;
          {
            NoGradGuard frozen;
            tpyr = teacher->fpn(teacher->backbone(image));
          }
          if (dc.pd) pd = pyramid_distill_loss(spyr, tpyr);
          if (dc.rd) {
            const auto s_regions =
                dc.pyramid_roi_align == net_cfg.pyramid_roi_align ? regions : model.regions(spyr, sample.boxes, dc.pyramid_roi_align);
            {
              NoGradGuard frozen;
              t_regions_rd = teacher->regions(tpyr, sample.boxes, dc.pyramid_roi_align);
            }
            rd = region_distill_loss(std::span<const Tensor>(&s_regions, 1), std::span<const Tensor>(&t_regions_rd, 1));
          }
          if (dc.ld) {
            Tensor t_logit;
            {
              NoGradGuard frozen;
              const bool reuse = dc.rd && dc.pyramid_roi_align == teacher->config().pyramid_roi_align;
              const auto t_regions = reuse ? t_regions_rd : teacher->regions(tpyr, sample.boxes);
              t_logit = teacher->head(t_regions).logit;
            }
            ld = logit_distill_loss(std::span<const Tensor>(&head.logit, 1), std::span<const Tensor>(&t_logit, 1));
          }
          auto [l_dist, report] = total_distill_loss(dc, pd, rd, ld);
          rec.distill = report;
          terms.push_back(l_dist);
        }
        auto total = ops::add_n(terms);
        rec.detection_loss = l_det.item();
        rec.rpn_loss = l_rpn.item();
        rec.total_loss = total.item();
        backward(total);
        rec.grad_norm = optimizer.grad_norm();
        if (!std::isfinite(rec.grad_norm)) throw NumericError("non-finite gradient norm");
        const bool clip = cfg.max_grad_norm > 0 && rec.grad_norm > cfg.max_grad_norm;
        optimizer.step(rec.lr, clip ? cfg.max_grad_norm / rec.grad_norm : 1.0);
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(rec.step) + " (scene " + scene.id + "): " + e.what());
      }
      summary.mean_detection_loss += rec.detection_loss;
      summary.mean_rpn_loss += rec.rpn_loss;
      summary.mean_distill_loss += rec.distill.total;
      if (on_step) on_step(rec);
      result.steps.push_back(rec);
    }
    const double n = static_cast<double>(scenes.size());
    summary.mean_detection_loss /= n;
    summary.mean_rpn_loss /= n;
    summary.mean_distill_loss /= n;
    result.epochs.push_back(summary);
  }
  return result;
}

TrainResult train_teacher(std::span<const Scene> scenes, const NetConfig& teacher_cfg, const TrainConfig& cfg,
                          const std::filesystem::path& checkpoint, const StepCallback& on_step) {
  auto result = train_detector(teacher_cfg, scenes, cfg, nullptr, on_step);
  result.model.save(checkpoint);
  return result;
}

TrainResult distill_student(std::span<const Scene> scenes, const NetConfig& teacher_cfg,
                            const std::filesystem::path& teacher_checkpoint, const NetConfig& student_cfg,
                            const TrainConfig& cfg, const std::filesystem::path& checkpoint,
                            const StepCallback& on_step) {
  if (teacher_cfg.pyramid_width != student_cfg.pyramid_width) {
    throw std::invalid_argument("teacher and student pyramid widths differ");
  }
  Detector teacher(teacher_cfg, 0);
  teacher.load(teacher_checkpoint);
  teacher.params().set_requires_grad(false);
  auto result = train_detector(student_cfg, scenes, cfg, &teacher, on_step);
  result.model.save(checkpoint);
  return result;
}

}  // namespace hkd
