#include "hkd/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hkd {

namespace {
const double kMaxLogScale = std::log(1000.0 / 16.0);
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Box clip_box(const Box& b, double img_w, double img_h) {
  return {std::clamp(b.x1, 0.0, img_w), std::clamp(b.y1, 0.0, img_h), std::clamp(b.x2, 0.0, img_w),
          std::clamp(b.y2, 0.0, img_h)};
}

Deltas encode_deltas(const Box& from, const Box& to) {
  if (!from.valid() || !to.valid()) throw std::invalid_argument("encode_deltas: degenerate box");
  return {(to.cx() - from.cx()) / from.width(), (to.cy() - from.cy()) / from.height(),
          std::log(to.width() / from.width()), std::log(to.height() / from.height())};
}

Box decode_deltas(const Box& from, const Deltas& d) {
  const double w = from.width() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = from.height() * std::exp(std::min(d[3], kMaxLogScale));
  const double cx = from.cx() + d[0] * from.width();
  const double cy = from.cy() + d[1] * from.height();
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  for (auto i : order) {
    bool suppressed = false;
    for (auto k : keep) {
      if (iou(boxes[i], boxes[k]) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

std::vector<LevelAnchors> make_anchors(std::size_t img_h, std::size_t img_w, double base_size, double aspect) {
  std::vector<LevelAnchors> out;
  for (int level = 2; level <= 5; ++level) {
    LevelAnchors la;
    la.level = level;
    la.stride = 1 << level;
    la.height = img_h / static_cast<std::size_t>(la.stride);
    la.width = img_w / static_cast<std::size_t>(la.stride);
    const double area = base_size * base_size * std::pow(2.0, level - 2);
    const double w = std::sqrt(area / aspect);
    const double h = w * aspect;
    la.boxes.reserve(la.height * la.width);
    for (std::size_t y = 0; y < la.height; ++y) {
      for (std::size_t x = 0; x < la.width; ++x) {
        const double cx = (static_cast<double>(x) + 0.5) * la.stride;
        const double cy = (static_cast<double>(y) + 0.5) * la.stride;
        la.boxes.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
    out.push_back(std::move(la));
  }
  return out;
}

}  // namespace hkd
