#include <gtest/gtest.h>

#include <cmath>

#include "hkd/boxes.hpp"
#include "oracles.hpp"

using namespace hkd;

TEST(Boxes, IouBasics) {
  Box a{0, 0, 10, 10}, b{5, 0, 15, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 50.0 / 150.0);
  EXPECT_EQ(iou(a, {20, 20, 30, 30}), 0.0);
}

TEST(Boxes, DeltaRoundTrip) {
  oracle::Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    auto from = oracle::random_box(rng, 100, 100, 2.0);
    auto to = oracle::random_box(rng, 100, 100, 2.0);
    auto back = decode_deltas(from, encode_deltas(from, to));
    EXPECT_NEAR(back.x1, to.x1, 1e-9);
    EXPECT_NEAR(back.y2, to.y2, 1e-9);
  }
}

TEST(Boxes, ZeroDeltasDecodeToSource) {
  Box a{3, 4, 13, 28};
  auto b = decode_deltas(a, {0, 0, 0, 0});
  EXPECT_NEAR(b.x1, a.x1, 1e-12);
  EXPECT_NEAR(b.y2, a.y2, 1e-12);
}

TEST(Boxes, DecodeClampsSizeDelta) {
  auto b = decode_deltas({0, 0, 10, 10}, {0, 0, 50, 50});
  EXPECT_NEAR(b.width(), 10 * 1000.0 / 16.0, 1e-6);
}

TEST(Boxes, ClipKeepsInsideImage) {
  auto c = clip_box({-5, -2, 50, 70}, 40, 60);
  EXPECT_EQ(c, (Box{0, 0, 40, 60}));
}

TEST(Nms, IdenticalBoxesKeepBest) {
  std::vector<Box> boxes{{0, 0, 10, 10}, {0, 0, 10, 10}};
  std::vector<double> scores{0.8, 0.9};
  EXPECT_EQ(nms(boxes, scores, 0.5), (std::vector<std::size_t>{1}));
}

TEST(Nms, MatchesBruteForce) {
  oracle::Rng rng(21);
  for (int t = 0; t < 60; ++t) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 50; ++i) {
      boxes.push_back(oracle::random_box(rng, 64, 64, 4.0));
      scores.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
    }
    if (t % 5 == 0) scores[7] = scores[3];  // exercise a tie
    const double thr = t % 2 ? 0.5 : 0.3;
    EXPECT_EQ(nms(boxes, scores, thr), oracle::nms(boxes, scores, thr));
  }
}

TEST(Anchors, GeometryPerLevel) {
  auto levels = make_anchors(96, 160);
  ASSERT_EQ(levels.size(), 4u);
  for (const auto& la : levels) {
    EXPECT_EQ(la.stride, 1 << la.level);
    EXPECT_EQ(la.height, 96u / la.stride);
    EXPECT_EQ(la.width, 160u / la.stride);
    ASSERT_EQ(la.boxes.size(), la.height * la.width);
    const auto& b = la.boxes.front();
    EXPECT_NEAR(b.area(), 256.0 * std::pow(2.0, la.level - 2), 1e-9);
    EXPECT_NEAR(b.height() / b.width(), 2.4, 1e-12);
    EXPECT_DOUBLE_EQ(b.cx(), 0.5 * la.stride);
    EXPECT_DOUBLE_EQ(la.boxes[1].cx() - b.cx(), la.stride);
  }
}
