#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hkd/detector.hpp"
#include "hkd/distill.hpp"
#include "hkd/scene.hpp"

namespace hkd {

struct TrainConfig {
  int epochs = 6;
  double base_lr = 0.002;
  std::vector<int> lr_decay_epochs{4, 6};
  double lr_decay_factor = 0.1;
  double flip_prob = 0.5;
  double momentum = 0.9;
  // Gradients with a global norm above this are rescaled to it; 0 disables.
  double max_grad_norm = 10.0;
  // The learning rate ramps linearly from warmup_factor * lr over this many steps.
  std::size_t warmup_steps = 100;
  double warmup_factor = 1.0 / 3.0;
  std::uint64_t seed = 1;
  DistillConfig distill{};
  ProposalConfig proposals{};
  RpnLossConfig rpn_sampling{};
  RoiSampleConfig roi_sampling{};

  void validate() const;
};

/// base_lr * factor^(number of decay epochs <= epoch), for 1 <= epoch <= epochs.
double lr_schedule(int epoch, const TrainConfig& cfg);

/// Mirrors the width axis of an image ([3,H,W] or [1,3,H,W]) and maps box
/// x-coordinates through x' = W - x with the endpoints swapped.
std::pair<Tensor, std::vector<GTBox>> horizontal_flip(const Tensor& image, std::span<const GTBox> boxes);

struct StepRecord {
  int epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double detection_loss = 0.0;
  double rpn_loss = 0.0;
  DistillReport distill{};
  double total_loss = 0.0;
  bool operator==(const StepRecord&) const;
};

struct EpochSummary {
  int epoch = 0;
  double lr = 0.0;
  double mean_detection_loss = 0.0;
  double mean_rpn_loss = 0.0;
  double mean_distill_loss = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Detector model;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Trains `net_cfg` from scratch on `scenes`. With a teacher and any
/// distillation term enabled in cfg.distill, the objective is
/// detection + RPN + lambda-weighted distillation; the teacher only runs
/// forward and receives no gradient. Without one it is detection + RPN.
TrainResult train_detector(const NetConfig& net_cfg, std::span<const Scene> scenes, const TrainConfig& cfg,
                           const Detector* teacher = nullptr, const StepCallback& on_step = {});

/// Phase one: supervised teacher training; the checkpoint is written to `checkpoint`.
TrainResult train_teacher(std::span<const Scene> scenes, const NetConfig& teacher_cfg, const TrainConfig& cfg,
                          const std::filesystem::path& checkpoint, const StepCallback& on_step = {});

/// Phase two: loads the frozen teacher and trains the student with the
/// hierarchical distillation objective; the student checkpoint is written
/// to `checkpoint`.
TrainResult distill_student(std::span<const Scene> scenes, const NetConfig& teacher_cfg,
                            const std::filesystem::path& teacher_checkpoint, const NetConfig& student_cfg,
                            const TrainConfig& cfg, const std::filesystem::path& checkpoint,
                            const StepCallback& on_step = {});

/// Seed used to initialise a network's weights for a run seed.
std::uint64_t init_seed(std::uint64_t run_seed, Role role);

}  // namespace hkd
