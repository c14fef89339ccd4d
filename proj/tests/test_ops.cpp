#include <gtest/gtest.h>

#include "hkd/gradcheck.hpp"
#include "hkd/ops.hpp"
#include "oracles.hpp"

using namespace hkd;

TEST(Conv2d, OnesSumToNine) {
  auto y = ops::conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.data()[0], 9.0);
}

TEST(Conv2d, IdentityKernel) {
  oracle::Rng rng(3);
  auto x = oracle::random_tensor({2, 1, 4, 5}, rng);
  auto y = ops::conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
  EXPECT_EQ(oracle::max_abs_diff(x.data(), y.data()), 0.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  oracle::Rng rng(11);
  for (int t = 0; t < 60; ++t) {
    std::uniform_int_distribution<int> d(1, 4);
    const std::size_t n = d(rng) % 2 + 1, c = d(rng), k = d(rng), h = 3 + d(rng), w = 3 + d(rng);
    const std::size_t ks = t % 3 == 0 ? 1 : 3;
    const int pad = static_cast<int>(ks / 2), stride = t % 2 ? 1 : 2;
    const std::size_t hh = stride == 2 && (h + 2 * pad - ks) % 2 ? h + 1 : h;
    const std::size_t ww = stride == 2 && (w + 2 * pad - ks) % 2 ? w + 1 : w;
    auto x = oracle::random_tensor({n, c, hh, ww}, rng);
    auto wt = oracle::random_tensor({k, c, ks, ks}, rng);
    auto b = oracle::random_tensor({k}, rng);
    std::size_t oh, ow;
    auto ref = oracle::conv2d({x.data().begin(), x.data().end()}, n, c, hh, ww, {wt.data().begin(), wt.data().end()}, k, ks,
                              ks, {b.data().begin(), b.data().end()}, stride, pad, oh, ow);
    auto y = ops::conv2d(x, wt, b, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{n, k, oh, ow}));
    EXPECT_LT(oracle::max_abs_diff(y.data(), ref), 1e-10);
  }
}

TEST(Conv2d, SpecShapeStride2) {
  oracle::Rng rng(5);
  auto x = oracle::random_tensor({1, 2, 5, 5}, rng);
  auto wt = oracle::random_tensor({3, 2, 3, 3}, rng);
  auto b = oracle::random_tensor({3}, rng);
  std::size_t oh, ow;
  auto ref = oracle::conv2d({x.data().begin(), x.data().end()}, 1, 2, 5, 5, {wt.data().begin(), wt.data().end()}, 3, 3, 3,
                            {b.data().begin(), b.data().end()}, 2, 1, oh, ow);
  auto y = ops::conv2d(x, wt, b, 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  EXPECT_LT(oracle::max_abs_diff(y.data(), ref), 1e-10);
}

TEST(Conv2d, RejectsBadGeometry) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1}), 1, 0), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 2, 0), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 1, 1), ShapeError);
}

TEST(Linear, IdentityInputGivesWeight) {
  oracle::Rng rng(2);
  auto wt = oracle::random_tensor({3, 4}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  auto y = ops::linear(Tensor::from({3, 3}, eye), wt, Tensor::zeros({4}));
  EXPECT_EQ(oracle::max_abs_diff(y.data(), wt.data()), 0.0);
}

TEST(Linear, ZeroWeightGivesBias) {
  auto y = ops::linear(Tensor::full({2, 3}, 7.0), Tensor::zeros({3, 2}), Tensor::from({2}, {0.5, -1.5}));
  EXPECT_EQ(y.at({0, 0}), 0.5);
  EXPECT_EQ(y.at({1, 1}), -1.5);
}

TEST(Linear, MatchesLoopOracle) {
  oracle::Rng rng(9);
  for (int t = 0; t < 60; ++t) {
    std::uniform_int_distribution<std::size_t> d(1, 7);
    const std::size_t n = d(rng), k = d(rng), m = d(rng);
    auto a = oracle::random_tensor({n, k}, rng);
    auto w = oracle::random_tensor({k, m}, rng);
    auto b = oracle::random_tensor({m}, rng);
    auto ref = oracle::matmul_bias({a.data().begin(), a.data().end()}, n, k, {w.data().begin(), w.data().end()}, m,
                                   {b.data().begin(), b.data().end()});
    EXPECT_LT(oracle::max_abs_diff(ops::linear(a, w, b).data(), ref), 1e-12);
  }
}

TEST(Bilinear, GridPointAndCentre) {
  auto f = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ops::bilinear_sample(f, 1, 0).data()[0], 2.0);
  EXPECT_EQ(ops::bilinear_sample(f, 0, 1).data()[0], 3.0);
  EXPECT_DOUBLE_EQ(ops::bilinear_sample(f, 0.5, 0.5).data()[0], 2.5);
}

TEST(Bilinear, MatchesClosedForm) {
  oracle::Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<std::size_t> d(1, 6);
    const std::size_t c = d(rng) % 3 + 1, h = d(rng), w = d(rng);
    auto f = oracle::random_tensor({c, h, w}, rng);
    std::uniform_real_distribution<double> u(-1.0, 7.0);
    const double x = u(rng), y = u(rng);
    auto out = ops::bilinear_sample(f, x, y);
    for (std::size_t ch = 0; ch < c; ++ch) {
      EXPECT_NEAR(out.data()[ch], oracle::bilinear(f.data().data() + ch * h * w, h, w, y, x), 1e-12);
    }
  }
}

TEST(Pooling, MaxpoolTiesRouteToFirst) {
  auto x = Tensor::from({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  auto y = ops::maxpool2x2(x);
  EXPECT_EQ(y.data()[0], 5.0);
  backward(ops::sum(y));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1] + x.grad()[2] + x.grad()[3], 0.0);
}

TEST(Pooling, UpsampleRepeats) {
  auto y = ops::upsample2x(Tensor::from({1, 1, 1, 2}, {1, 2}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  EXPECT_EQ(y.at({0, 0, 1, 1}), 1.0);
  EXPECT_EQ(y.at({0, 0, 1, 2}), 2.0);
}

TEST(Losses, SoftmaxCrossEntropyByHand) {
  auto logits = Tensor::from({2, 2}, {0.0, 0.0, 2.0, -1.0});
  std::vector<int> labels{1, 0};
  const double expect = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-3.0)));
  EXPECT_NEAR(ops::softmax_cross_entropy(logits, labels).item(), expect, 1e-14);
}

TEST(Losses, BceWithLogitsByHand) {
  std::vector<double> t{1.0, 0.0}, w{1.0, 0.5};
  auto l = ops::bce_with_logits(Tensor::from({2}, {0.3, -40.0}), t, w);
  EXPECT_NEAR(l.item(), std::log1p(std::exp(-0.3)) + 0.5 * std::log1p(std::exp(-40.0)), 1e-14);
}

TEST(Losses, SmoothL1Pieces) {
  std::vector<double> t{0.0, 0.0, 0.0, 0.0}, w{1, 1, 1, 1};
  auto l = ops::smooth_l1(Tensor::from({4}, {0.5, -0.5, 2.0, -3.0}), t, w);
  EXPECT_DOUBLE_EQ(l.item(), 0.125 + 0.125 + 1.5 + 2.5);
}

TEST(Gradcheck, EveryOpPasses) {
  for (const auto& r : run_op_gradchecks()) {
    EXPECT_TRUE(r.passed()) << r.name << " rel err " << r.max_rel_error;
    EXPECT_EQ(r.instances, 20u);
  }
}

TEST(Gradcheck, DetectsAWrongGradient) {
  // The detached branch changes the value but not the analytic gradient.
  GradcheckOptions opts;
  oracle::Rng rng(1);
  ScalarFn fn = [](const std::vector<Tensor>& in) {
    return ops::add(ops::sq_diff_sum(in[0], Tensor::zeros({2})), ops::sum(in[0].detach()));
  };
  const double err = gradient_rel_error(fn, {Tensor::from({2}, {0.3, -0.7}, true)}, opts, rng);
  EXPECT_GT(err, 1e-2);
}
