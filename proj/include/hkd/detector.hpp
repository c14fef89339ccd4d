#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hkd/boxes.hpp"
#include "hkd/checkpoint.hpp"
#include "hkd/pyramid.hpp"
#include "hkd/roi_ops.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

enum class Role { teacher, student };

const char* role_name(Role role);

/// Architecture of one detector. Backbone stage k (C2..C5) is a 2x2 max-pool,
/// a 3x3 transition conv to widths[k], then blocks[k] residual blocks of two
/// 3x3 convs. The head is flatten -> FC1(head_hidden) -> FC2(logit_width) with
/// sibling class/box outputs.
struct NetConfig {
  Role role = Role::student;
  std::array<int, 4> widths{8, 16, 32, 64};
  std::array<int, 4> blocks{1, 1, 1, 1};
  int pyramid_width = 32;
  int head_hidden = 32;
  int logit_width = 32;
  bool pyramid_roi_align = true;  // head consumes Pyramid RoIAlign (4d) or single-level (d) crops
  RoiAlignConfig roi{};

  static NetConfig teacher_default();
  static NetConfig student_default();

  void validate() const;
  std::size_t head_input_width() const;
};

/// Ordered named parameters of a network.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Shape shape, double init_std, std::mt19937_64& rng);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Tensor> tensors() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t count() const;
  void set_requires_grad(bool flag);

  std::vector<NamedTensor> to_named() const;
  /// Copies values in by name; names and shapes must match exactly.
  void load_named(const std::vector<NamedTensor>& named);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-level RPN outputs: objectness [1,1,Hi,Wi], deltas [1,4,Hi,Wi].
struct RpnOutput {
  std::array<Tensor, kNumLevels> objectness;
  std::array<Tensor, kNumLevels> deltas;
};

/// Second-stage outputs for R regions.
struct HeadOutput {
  Tensor logit;         // [R, logit_width]: FC2 activation
  Tensor class_scores;  // [R, 2]: background, pedestrian
  Tensor box_deltas;    // [R, 4]
};

class Detector {
 public:
  Detector(NetConfig cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// image [1,3,H,W] with H, W divisible by 32.
  BackboneFeatures backbone(const Tensor& image) const;
  FeaturePyramid fpn(const BackboneFeatures& feats) const;
  RpnOutput rpn(const FeaturePyramid& pyramid) const;
  /// Crops the boxes with this network's RoIAlign mode.
  Tensor regions(const FeaturePyramid& pyramid, std::span<const Box> rois) const;
  /// Same crops under an explicit RoIAlign mode.
  Tensor regions(const FeaturePyramid& pyramid, std::span<const Box> rois, bool pyramid_mode) const;
  /// region [R, C, S, S] or already flattened [R, head_input_width].
  HeadOutput head(const Tensor& region) const;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  Tensor conv(const Tensor& x, const std::string& name, int pad) const;

  NetConfig cfg_;
  ParamStore params_;
};

std::size_t parameter_count(const NetConfig& cfg);

struct ProposalConfig {
  std::size_t pre_nms_top_k = 200;
  std::size_t post_nms_top_k = 32;
  double nms_iou = 0.7;
  double min_size = 1.0;  // boxes narrower or shorter than this after clipping are dropped
};

/// Decodes RPN deltas onto anchors, clips, keeps the pre_nms_top_k highest
/// objectness scores, applies greedy NMS and keeps at most post_nms_top_k.
/// RoI scores are sigmoid probabilities.
std::vector<RoI> generate_proposals(const RpnOutput& rpn, const std::vector<LevelAnchors>& anchors,
                                    const ProposalConfig& cfg, double img_w, double img_h);

/// Anchor labels against ground truth: 1 positive, 0 negative, -1 ignored.
struct AnchorAssignment {
  std::vector<int> labels;
  std::vector<int> matched_gt;  // valid where label == 1
};

AnchorAssignment assign_anchors(std::span<const Box> anchors, std::span<const Box> gts, double pos_iou = 0.7,
                                double neg_iou = 0.3);

struct RpnLossConfig {
  std::size_t batch = 64;
  double positive_fraction = 0.5;
};

/// Sampled binary cross-entropy on objectness plus smooth-L1 on the deltas
/// of sampled positives, both divided by the number of sampled anchors. With
/// no ground truth, only negatives are sampled. When `rng` is null the first
/// eligible anchors (in anchor order) are taken instead of a random subset.
Tensor rpn_loss(const RpnOutput& rpn, const std::vector<LevelAnchors>& anchors, std::span<const Box> gts,
                std::mt19937_64* rng, const RpnLossConfig& cfg = {});

/// Second-stage regression targets are divided by these.
inline constexpr Deltas kHeadDeltaStd{0.1, 0.1, 0.2, 0.2};

/// RoIs chosen for one second-stage step.
struct RoiSample {
  std::vector<Box> boxes;
  std::vector<int> labels;        // 1 pedestrian, 0 background
  std::vector<Deltas> targets;    // normalized, meaningful where label == 1
};

struct RoiSampleConfig {
  std::size_t batch = 32;
  double positive_fraction = 0.25;
  double positive_iou = 0.5;
};

/// Labels proposals (plus the ground-truth boxes themselves) by IoU and
/// samples up to `batch` of them at the configured positive fraction.
RoiSample sample_rois(std::span<const RoI> proposals, std::span<const Box> gts, std::mt19937_64& rng,
                      const RoiSampleConfig& cfg = {});

/// Mean cross-entropy over RoIs plus smooth-L1 over positive RoIs' deltas
/// divided by the RoI count.
Tensor detection_loss(const Tensor& class_scores, const Tensor& box_deltas, std::span<const int> labels,
                      std::span<const Deltas> targets);

struct DetectConfig {
  ProposalConfig proposals{};
  double nms_iou = 0.5;
  double min_score = 0.0;
  std::size_t max_detections = 32;
};

/// Inference: proposals -> head -> decoded, clipped, NMS-filtered detections
/// sorted by descending score.
std::vector<Detection> detect(const Detector& net, const Tensor& image, const DetectConfig& cfg = {});

/// Image tensor [1,3,H,W] from planar [3,H,W] values in [0,1] (centred at 0).
Tensor image_tensor(std::span<const double> planar, std::size_t height, std::size_t width);

}  // namespace hkd
