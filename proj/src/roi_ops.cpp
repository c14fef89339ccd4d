#include "hkd/roi_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hkd/ops.hpp"

namespace hkd {

namespace {

struct Plane {
  std::size_t channels, height, width;
};

Plane plane_of(const Tensor& feature) {
  if (feature.rank() == 3) return {feature.dim(0), feature.dim(1), feature.dim(2)};
  if (feature.rank() == 4 && feature.dim(0) == 1) return {feature.dim(1), feature.dim(2), feature.dim(3)};
  throw ShapeError("roi_align: feature must be [C,H,W] or [1,C,H,W], got " + shape_str(feature.shape()));
}

// One RoI's sampling pattern: for every output bin, the taps that feed it.
struct SamplingPlan {
  std::vector<ops::detail::BilinearTaps> taps;  // S*S*samples*samples, bin-major
};

SamplingPlan plan_roi(const Plane& p, const Box& roi, double stride, int s, int samples) {
  const double fx1 = roi.x1 / stride;
  const double fy1 = roi.y1 / stride;
  const double rw = std::max(roi.x2 / stride - fx1, kMinRoiExtent);
  const double rh = std::max(roi.y2 / stride - fy1, kMinRoiExtent);
  const double bw = rw / s;
  const double bh = rh / s;
  SamplingPlan plan;
  plan.taps.reserve(static_cast<std::size_t>(s * s * samples * samples));
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      for (int sy = 0; sy < samples; ++sy) {
        const double y = fy1 + (i + (sy + 0.5) / samples) * bh;
        for (int sx = 0; sx < samples; ++sx) {
          const double x = fx1 + (j + (sx + 0.5) / samples) * bw;
          plan.taps.push_back(ops::detail::bilinear_taps(p.height, p.width, y, x));
        }
      }
    }
  }
  return plan;
}

struct Assignment {
  std::size_t source;  // index into the source tensors
  double stride;
};

// RoIAlign where each RoI reads from one of several same-width sources.
Tensor gather_roi_align(const std::vector<Tensor>& sources, std::span<const Box> rois,
                        const std::vector<Assignment>& assign, int s, int samples) {
  if (s < 1 || samples < 1) throw ShapeError("roi_align: output size and samples must be positive");
  if (rois.empty()) throw ShapeError("roi_align: empty RoI list");
  std::vector<Plane> planes;
  for (const auto& src : sources) planes.push_back(plane_of(src));
  const auto c = planes.front().channels;
  for (const auto& p : planes) {
    if (p.channels != c) throw ShapeError("roi_align: sources differ in channel count");
  }
  const auto r = rois.size();
  const auto bins = static_cast<std::size_t>(s * s);
  const auto per_bin = static_cast<std::size_t>(samples * samples);
  const double inv = 1.0 / static_cast<double>(per_bin);

  std::vector<SamplingPlan> plans;
  plans.reserve(r);
  std::vector<double> out(r * c * bins, 0.0);
  for (std::size_t k = 0; k < r; ++k) {
    const auto& a = assign[k];
    const auto& p = planes[a.source];
    plans.push_back(plan_roi(p, rois[k], a.stride, s, samples));
    auto fv = sources[a.source].data();
    const auto hw = p.height * p.width;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = fv.data() + ch * hw;
      double* dst = out.data() + (k * c + ch) * bins;
      for (std::size_t b = 0; b < bins; ++b) {
        double acc = 0.0;
        for (std::size_t q = 0; q < per_bin; ++q) {
          const auto& t = plans[k].taps[b * per_bin + q];
          acc += t.weight[0] * plane[t.index[0]] + t.weight[1] * plane[t.index[1]] + t.weight[2] * plane[t.index[2]] +
                 t.weight[3] * plane[t.index[3]];
        }
        dst[b] = acc * inv;
      }
    }
  }
  std::vector<std::size_t> src_of;
  for (const auto& a : assign) src_of.push_back(a.source);
  const auto su = static_cast<std::size_t>(s);
  return make_result({r, c, su, su}, std::move(out), sources,
                     [plans = std::move(plans), src_of = std::move(src_of), planes, c, bins, per_bin,
                      inv](hkd::detail::Node& self) {
    for (std::size_t k = 0; k < plans.size(); ++k) {
      auto& parent = *self.parents[src_of[k]];
      if (!parent.requires_grad) continue;
      auto& g = parent.ensure_grad();
      const auto hw = planes[src_of[k]].height * planes[src_of[k]].width;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* plane = g.data() + ch * hw;
        const double* dy = self.grad.data() + (k * c + ch) * bins;
        for (std::size_t b = 0; b < bins; ++b) {
          const double gb = dy[b] * inv;
          for (std::size_t q = 0; q < per_bin; ++q) {
            const auto& t = plans[k].taps[b * per_bin + q];
            for (int m = 0; m < 4; ++m) plane[t.index[m]] += t.weight[m] * gb;
          }
        }
      }
    }
  }, "roi_align");
}

}  // namespace

int assign_level(const Box& roi, double canonical_size, int canonical_level) {
  const double scale = std::sqrt(std::max(roi.width() * roi.height(), 1e-12));
  const double k = std::floor(canonical_level + std::log2(scale / canonical_size));
  return static_cast<int>(std::clamp(k, static_cast<double>(kMinLevel), static_cast<double>(kMaxLevel)));
}

Tensor roi_align(const Tensor& feature, std::span<const Box> rois, double stride, int output_size, int samples) {
  if (stride <= 0) throw ShapeError("roi_align: stride must be positive");
  std::vector<Assignment> assign(rois.size(), Assignment{0, stride});
  return gather_roi_align({feature}, rois, assign, output_size, samples);
}

Tensor roi_align(const Tensor& feature, const Box& roi, double stride, int output_size, int samples) {
  auto batched = roi_align(feature, std::span<const Box>(&roi, 1), stride, output_size, samples);
  const auto& s = batched.shape();
  return ops::reshape(batched, {s[1], s[2], s[3]});
}

Tensor pyramid_roi_align(const FeaturePyramid& pyramid, std::span<const Box> rois, const RoiAlignConfig& cfg) {
  std::vector<Tensor> crops;
  crops.reserve(kNumLevels);
  for (int level = kMinLevel; level <= kMaxLevel; ++level) {
    crops.push_back(roi_align(pyramid[level], rois, level_stride(level), cfg.output_size, cfg.samples));
  }
  return ops::concat(crops, 1);
}

Tensor level_roi_align(const FeaturePyramid& pyramid, std::span<const Box> rois, const RoiAlignConfig& cfg) {
  std::vector<Tensor> sources(pyramid.levels.begin(), pyramid.levels.end());
  std::vector<Assignment> assign;
  assign.reserve(rois.size());
  for (const auto& roi : rois) {
    const int level = assign_level(roi, cfg.canonical_size, cfg.canonical_level);
    assign.push_back({static_cast<std::size_t>(level - kMinLevel), static_cast<double>(level_stride(level))});
  }
  return gather_roi_align(sources, rois, assign, cfg.output_size, cfg.samples);
}

Tensor region_features(const FeaturePyramid& pyramid, std::span<const Box> rois, bool pyramid_mode,
                       const RoiAlignConfig& cfg) {
  return pyramid_mode ? pyramid_roi_align(pyramid, rois, cfg) : level_roi_align(pyramid, rois, cfg);
}

}  // namespace hkd
