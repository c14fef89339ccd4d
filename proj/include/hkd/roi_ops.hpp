#pragma once

#include <span>

#include "hkd/boxes.hpp"
#include "hkd/pyramid.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

struct RoiAlignConfig {
  int output_size = 7;  // S
  int samples = 2;      // bilinear samples per bin axis
  // Level assignment: k = floor(k0 + log2(sqrt(w*h) / canonical)), clamped to [2,5].
  double canonical_size = 56.0;
  int canonical_level = 4;
};

/// Feature extent (in feature-map cells) below which a RoI side is widened.
inline constexpr double kMinRoiExtent = 1e-6;

int assign_level(const Box& roi, double canonical_size = 56.0, int canonical_level = 4);

/// RoIAlign of each box against one feature map [1,C,H,W] (or [C,H,W]).
/// Image coordinates are divided by `stride` without rounding or half-pixel
/// offset; every output bin averages samples x samples bilinear taps on a
/// regular sub-grid. Returns [R, C, S, S].
Tensor roi_align(const Tensor& feature, std::span<const Box> rois, double stride, int output_size, int samples);

/// Single RoI; returns [C, S, S].
Tensor roi_align(const Tensor& feature, const Box& roi, double stride, int output_size, int samples);

/// Crops every box from all of P2..P5 and concatenates along channels in
/// level order. Returns [R, 4d, S, S].
Tensor pyramid_roi_align(const FeaturePyramid& pyramid, std::span<const Box> rois, const RoiAlignConfig& cfg = {});

/// Crops each box from its assigned pyramid level only. Returns [R, d, S, S].
Tensor level_roi_align(const FeaturePyramid& pyramid, std::span<const Box> rois, const RoiAlignConfig& cfg = {});

/// Dispatches to pyramid_roi_align or level_roi_align.
Tensor region_features(const FeaturePyramid& pyramid, std::span<const Box> rois, bool pyramid_mode,
                       const RoiAlignConfig& cfg = {});

}  // namespace hkd
