#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hkd/boxes.hpp"

namespace hkd {

enum class Subset { reasonable, small };

/// Parses "reasonable" / "small"; throws std::invalid_argument otherwise.
Subset parse_subset(const std::string& name);
const char* subset_name(Subset subset);

/// Subset thresholds: heights are the full-resolution benchmark values
/// (50 and 75 pixels) multiplied by `height_scale`; visibility bounds are
/// unscaled. reasonable: h > 50s and v > 0.65. small: 50s < h < 75s and
/// 0.20 < v < 0.65.
bool in_subset(const GTBox& gt, Subset subset, double height_scale);

/// Marks every box outside the subset as an ignore region.
std::vector<GTBox> subset_filter(std::vector<GTBox> gts, Subset subset, double height_scale);

enum class MatchKind { true_positive, false_positive, ignored };

struct MatchResult {
  std::vector<MatchKind> detections;  // in input order
  std::vector<bool> gt_matched;       // meaningful for non-ignore boxes
};

/// Greedy matching in descending score order (input order breaks ties):
/// each detection takes the highest-IoU unmatched non-ignore box with
/// IoU >= iou_threshold; failing that, overlapping an ignore box at the same
/// threshold makes it neutral; otherwise it is a false positive.
MatchResult match_detections(std::span<const Detection> dets, std::span<const GTBox> gts, double iou_threshold = 0.5);

struct ImageResult {
  std::vector<Detection> detections;
  std::vector<GTBox> ground_truth;
};

struct CurvePoint {
  double fppi = 0.0;
  double miss_rate = 1.0;
  double score = 0.0;  // threshold producing this point
};

struct EvalCurve {
  std::vector<CurvePoint> points;  // fppi nondecreasing
  double log_avg_mr = 1.0;
};

/// One point per distinct detection score, sweeping the threshold downward.
/// With no detections the curve is the single point (0, 1). Throws
/// std::invalid_argument when there is no non-ignore ground truth.
EvalCurve mr_fppi_curve(std::span<const ImageResult> images, std::size_t num_images, double iou_threshold = 0.5);

/// Geometric mean (floored at 1e-10; exactly 0 when every sample is 0) of the miss rate sampled at 9
/// log-spaced FPPI references in [1e-2, 1]; at each reference the point with
/// the largest fppi <= reference is used, or the first point if none is.
double log_average_miss_rate(const EvalCurve& curve);

/// Reference FPPI values used by log_average_miss_rate.
std::vector<double> mr_reference_points();

void write_curve_tsv(const std::filesystem::path& path, const EvalCurve& curve);

// Line formats:
//   detections:   image_id x1 y1 x2 y2 score
//   annotations:  image_id x1 y1 x2 y2 visibility
using DetectionsById = std::map<std::string, std::vector<Detection>>;
using AnnotationsById = std::map<std::string, std::vector<GTBox>>;

DetectionsById read_detections(const std::filesystem::path& path);
AnnotationsById read_annotations(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const DetectionsById& dets);
void write_annotations(const std::filesystem::path& path, const AnnotationsById& gts);

}  // namespace hkd
