// Brute-force reference implementations used by the unit and acceptance
// tests. These are written directly from the definitions and share no code
// with the library beyond its plain data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "hkd/boxes.hpp"
#include "hkd/tensor.hpp"

namespace oracle {

using Rng = std::mt19937_64;

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline hkd::Tensor random_tensor(hkd::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = hkd::shape_numel(shape);
  return hkd::Tensor::from(std::move(shape), random_values(n, rng, lo, hi));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Cross-correlation with zero padding, six nested loops.
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                  const std::vector<double>& wt, std::size_t k, std::size_t kh, std::size_t kw,
                                  const std::vector<double>& bias, int stride, int pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * k * oh * ow);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < k; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - pad;
                const long ix = static_cast<long>(x * stride + j) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += in[((b * c + ch) * h + iy) * w + ix] * wt[((o * c + ch) * kh + i) * kw + j];
              }
          out[((b * k + o) * oh + y) * ow + x] = acc;
        }
  return out;
}

inline std::vector<double> matmul_bias(const std::vector<double>& a, std::size_t n, std::size_t d,
                                       const std::vector<double>& wt, std::size_t m, const std::vector<double>& bias) {
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = bias[j];
      for (std::size_t t = 0; t < d; ++t) acc += a[i * d + t] * wt[t * m + j];
      out[i * m + j] = acc;
    }
  return out;
}

// Clamped bilinear interpolation of one H x W plane, from the weighted-sum formula.
inline double bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x) {
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  const double fy = std::floor(y), fx = std::floor(x);
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const double gy = fy + dy, gx = fx + dx;
      const double wy = 1.0 - std::abs(y - gy), wx = 1.0 - std::abs(x - gx);
      if (wy <= 0 || wx <= 0) continue;
      const auto iy = std::min(static_cast<std::size_t>(gy), h - 1);
      const auto ix = std::min(static_cast<std::size_t>(gx), w - 1);
      acc += wy * wx * plane[iy * w + ix];
    }
  return acc;
}

// RoIAlign of one box on a C x H x W map: average of samples^2 bilinear
// points per bin, coordinates divided by stride with no offset.
inline std::vector<double> roi_align(const std::vector<double>& f, std::size_t c, std::size_t h, std::size_t w,
                                     const hkd::Box& b, double stride, int s, int samples) {
  std::vector<double> out(c * s * s, 0.0);
  const double x0 = b.x1 / stride, y0 = b.y1 / stride;
  const double bw = std::max(b.x2 / stride - x0, 1e-6) / s, bh = std::max(b.y2 / stride - y0, 1e-6) / s;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        double acc = 0.0;
        for (int a = 0; a < samples; ++a)
          for (int q = 0; q < samples; ++q) {
            const double y = y0 + bh * (i + (a + 0.5) / samples);
            const double x = x0 + bw * (j + (q + 0.5) / samples);
            acc += bilinear(f.data() + ch * h * w, h, w, y, x);
          }
        out[(ch * s + i) * s + j] = acc / (samples * samples);
      }
  return out;
}

inline double iou(const hkd::Box& a, const hkd::Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double u = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return u > 0 ? inter / u : 0.0;
}

// O(n^2) NMS: repeatedly take the best remaining box (lowest index on ties)
// and strike every remaining box overlapping it above the threshold.
inline std::vector<std::size_t> nms(const std::vector<hkd::Box>& boxes, const std::vector<double>& scores, double thr) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> keep;
  while (true) {
    long best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best < 0 || scores[i] > scores[best])) best = static_cast<long>(i);
    }
    if (best < 0) break;
    keep.push_back(static_cast<std::size_t>(best));
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && oracle::iou(boxes[best], boxes[i]) > thr) alive[i] = false;
    }
  }
  return keep;
}

inline double sq_sum(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

inline hkd::Box random_box(Rng& rng, double max_w, double max_h, double min_side = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double bw = min_side + u(rng) * (max_w * 0.6 - min_side);
  const double bh = min_side + u(rng) * (max_h * 0.6 - min_side);
  const double x = u(rng) * (max_w - bw), y = u(rng) * (max_h - bh);
  return {x, y, x + bw, y + bh};
}

}  // namespace oracle
