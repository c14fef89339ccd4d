// Independent evaluation reference: greedy matching written from the rule,
// curve points recomputed from scratch at every score threshold, and random
// scenario generation for the property checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "hkd/evaluation.hpp"
#include "oracles.hpp"

namespace oracle {

enum Kind { tp = 0, fp = 1, neutral = 2 };

inline std::vector<int> greedy_match(const std::vector<hkd::Detection>& dets, const std::vector<hkd::GTBox>& gts, double thr) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  std::vector<int> kind(dets.size(), fp);
  std::vector<char> taken(gts.size(), 0);
  for (auto d : order) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = oracle::iou(dets[d].box, gts[g].box);
      if (!gts[g].ignore && !taken[g] && o >= thr) cand.push_back({o, g});
    }
    if (!cand.empty()) {
      // highest IoU, lowest index among equals
      auto best = cand.front();
      for (const auto& c : cand)
        if (c.first > best.first) best = c;
      taken[best.second] = 1;
      kind[d] = tp;
      continue;
    }
    for (const auto& g : gts)
      if (g.ignore && oracle::iou(dets[d].box, g.box) >= thr) kind[d] = neutral;
  }
  return kind;
}

struct Counts {
  std::size_t tp = 0, fp = 0, gt = 0;
  bool operator==(const Counts&) const = default;
};

// Counts with only detections scoring >= thr kept.
inline Counts counts_at(const std::vector<hkd::ImageResult>& images, double score_thr, double iou_thr = 0.5) {
  Counts c;
  for (const auto& img : images) {
    std::vector<hkd::Detection> kept;
    for (const auto& d : img.detections)
      if (d.score >= score_thr) kept.push_back(d);
    for (int k : greedy_match(kept, img.ground_truth, iou_thr)) {
      c.tp += k == tp;
      c.fp += k == fp;
    }
    for (const auto& g : img.ground_truth) c.gt += !g.ignore;
  }
  return c;
}

inline std::vector<double> distinct_scores(const std::vector<hkd::ImageResult>& images) {
  std::vector<double> s;
  for (const auto& img : images)
    for (const auto& d : img.detections) s.push_back(d.score);
  std::sort(s.begin(), s.end(), std::greater<>());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline std::vector<hkd::CurvePoint> curve(const std::vector<hkd::ImageResult>& images, std::size_t num_images) {
  std::vector<hkd::CurvePoint> pts;
  const auto scores = distinct_scores(images);
  if (scores.empty()) return {{0.0, 1.0, 0.0}};
  for (double s : scores) {
    const auto c = counts_at(images, s);
    pts.push_back({static_cast<double>(c.fp) / static_cast<double>(num_images),
                   static_cast<double>(c.gt - c.tp) / static_cast<double>(c.gt), s});
  }
  return pts;
}

inline double log_average(const std::vector<hkd::CurvePoint>& pts) {
  double acc = 0.0;
  int zeros = 0;
  for (int k = 0; k <= 8; ++k) {
    const double ref = std::pow(10.0, -2.0 + 0.25 * k);
    double m = pts.front().miss_rate;
    for (const auto& p : pts)
      if (p.fppi <= ref) m = p.miss_rate;
    zeros += m == 0.0;
    acc += std::log(std::max(m, 1e-10));
  }
  return zeros == 9 ? 0.0 : std::exp(acc / 9.0);
}

inline hkd::Box jitter(const hkd::Box& b, Rng& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  const double w = b.width(), h = b.height();
  return {b.x1 + u(rng) * w, b.y1 + u(rng) * h, b.x2 + u(rng) * w, b.y2 + u(rng) * h};
}

// A handful of images with pedestrian boxes (some ignore), jittered hits,
// duplicates and clutter. Scores are continuous, hence distinct.
inline std::vector<hkd::ImageResult> random_scenario(Rng& rng, std::size_t images = 5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> ngt(0, 4), nclutter(0, 4);
  std::vector<hkd::ImageResult> out(images);
  bool any_gt = false;
  for (auto& img : out) {
    for (int i = ngt(rng); i > 0; --i) {
      auto b = random_box(rng, 150, 90, 4);
      img.ground_truth.push_back({b, u(rng), u(rng) < 0.25});
      any_gt = any_gt || !img.ground_truth.back().ignore;
    }
    for (const auto& g : img.ground_truth) {
      if (u(rng) < 0.7) img.detections.push_back({jitter(g.box, rng, 0.15), u(rng)});
      if (u(rng) < 0.2) img.detections.push_back({jitter(g.box, rng, 0.1), u(rng)});
    }
    for (int i = nclutter(rng); i > 0; --i) img.detections.push_back({random_box(rng, 150, 90, 4), u(rng)});
  }
  if (!any_gt) out.front().ground_truth.push_back({{10, 10, 20, 34}, 1.0, false});
  return out;
}

// Three images, three countable pedestrians, one ignore region. Sorted by
// score the detections are TP TP FP FP neutral FP, so the curve is
// (0,2/3) (0,1/3) (1/3,1/3) (2/3,1/3) (2/3,1/3) (1,1/3).
inline std::vector<hkd::ImageResult> crafted_scenario() {
  return {
      {{{{0, 0, 10, 20}, 0.9}, {{100, 60, 110, 80}, 0.6}}, {{{0, 0, 10, 20}, 1.0, false}, {{50, 0, 60, 20}, 1.0, false}}},
      {{{{0, 0, 10, 20}, 0.8}, {{120, 10, 130, 30}, 0.7}}, {{{0, 0, 10, 20}, 0.9, false}}},
      {{{{30, 30, 40, 50}, 0.5}, {{70, 5, 80, 25}, 0.4}}, {{{30, 30, 40, 50}, 1.0, true}}},
  };
}

inline std::vector<std::array<double, 3>> crafted_curve() {
  const double third = 1.0 / 3.0, two_thirds = 2.0 / 3.0;
  return {{0.0, two_thirds, 0.9}, {0.0, third, 0.8}, {third, third, 0.7},
          {two_thirds, third, 0.6}, {two_thirds, third, 0.5}, {1.0, third, 0.4}};
}

// Adds an ignore box in a clear corner of each image plus detections lying
// only on it.
inline std::vector<hkd::ImageResult> with_ignore_only_detections(std::vector<hkd::ImageResult> imgs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const hkd::Box region{140, 70, 150, 88};
  for (auto& img : imgs) {
    bool clear = true;
    for (const auto& g : img.ground_truth) clear = clear && oracle::iou(g.box, region) == 0.0;
    if (!clear) continue;
    img.ground_truth.push_back({region, 1.0, true});
    img.detections.push_back({region, u(rng)});
    img.detections.push_back({{140.5, 70, 150, 88}, u(rng)});
  }
  return imgs;
}

}  // namespace oracle
