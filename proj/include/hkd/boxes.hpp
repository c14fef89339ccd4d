#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace hkd {

/// Axis-aligned box in continuous image-pixel coordinates.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool operator==(const Box&) const = default;
};

/// Region of interest forwarded to the second stage.
struct RoI {
  Box box;
  double score = 0.0;
};

/// Final detector output.
struct Detection {
  Box box;
  double score = 0.0;
};

/// Ground-truth pedestrian annotation.
struct GTBox {
  Box box;
  double visibility = 1.0;
  bool ignore = false;

  double height() const { return box.height(); }
  bool operator==(const GTBox&) const = default;
};

using Deltas = std::array<double, 4>;  // dx, dy, dw, dh

double iou(const Box& a, const Box& b);
Box clip_box(const Box& b, double img_w, double img_h);

/// Regression target taking `from` onto `to`: center shift relative to the
/// source size, log-ratio of sizes.
Deltas encode_deltas(const Box& from, const Box& to);
/// Inverse of encode_deltas; dw, dh are clamped to log(1000/16).
Box decode_deltas(const Box& from, const Deltas& d);

/// Greedy NMS over boxes sorted by descending score (stable on ties).
/// A box is dropped when its IoU with an already kept box exceeds `threshold`.
/// Returns kept indices in score order.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double threshold);

/// Image-space anchors for one pyramid level, one per feature location in
/// row-major (y, x) order, centred on ((x + 0.5) * stride, (y + 0.5) * stride).
struct LevelAnchors {
  int level = 2;
  int stride = 4;
  std::size_t height = 0, width = 0;
  std::vector<Box> boxes;
};

/// Pedestrian-shaped anchors (h:w = aspect) of area base_size^2 * 2^(level-2),
/// one per location on P2..P5 of an img_h x img_w image.
std::vector<LevelAnchors> make_anchors(std::size_t img_h, std::size_t img_w, double base_size = 16.0,
                                       double aspect = 2.4);

}  // namespace hkd
