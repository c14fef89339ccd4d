#include "hkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hkd/detector.hpp"
#include "hkd/distill.hpp"
#include "hkd/ops.hpp"
#include "hkd/roi_ops.hpp"
#include "hkd/scene.hpp"

namespace hkd {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so relu's kink is never within eps.
Tensor away_from_zero(Shape shape, Rng& rng) {
  auto t = random_tensor(std::move(shape), rng, 0.05, 1.0);
  for (auto& x : t.mutable_data()) {
    if (uniform(rng, 0, 1) < 0.5) x = -x;
  }
  return t;
}

// Distinct values spaced 0.01 apart, so no pooling window has a near-tie.
Tensor distinct_values(Shape shape, Rng& rng) {
  const auto n = shape_numel(shape);
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x = 0.01 * x - 0.005 * static_cast<double>(n);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Linear random projection of any tensor to a scalar.
Tensor project(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = t.numel();
  auto w = random_tensor({n, 1}, rng);
  w.set_requires_grad(false);
  return ops::sum(ops::linear(ops::reshape(t, {1, n}), w, Tensor::zeros({1})));
}

Box random_box(Rng& rng, double max_x, double max_y, double min_extent = 2.0) {
  const double w = uniform(rng, min_extent, std::max(min_extent + 1e-3, max_x * 0.8));
  const double h = uniform(rng, min_extent, std::max(min_extent + 1e-3, max_y * 0.8));
  const double x1 = uniform(rng, 0, std::max(1e-3, max_x - w));
  const double y1 = uniform(rng, 0, std::max(1e-3, max_y - h));
  return {x1, y1, x1 + w, y1 + h};
}

FeaturePyramid random_pyramid(Rng& rng, std::size_t channels, std::size_t h2, std::size_t w2) {
  FeaturePyramid p;
  for (int k = 0; k < kNumLevels; ++k) {
    p.levels[k] = random_tensor({1, channels, std::max<std::size_t>(1, h2 >> k), std::max<std::size_t>(1, w2 >> k)}, rng);
  }
  return p;
}

std::vector<Tensor> pyramid_leaves(const FeaturePyramid& p) { return {p.levels.begin(), p.levels.end()}; }

FeaturePyramid as_pyramid(const std::vector<Tensor>& in, std::size_t offset) {
  FeaturePyramid p;
  for (int k = 0; k < kNumLevels; ++k) p.levels[k] = in[offset + k];
  return p;
}

struct OpCase {
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

using CaseFactory = std::function<OpCase(Rng&, std::uint64_t)>;

std::vector<std::pair<std::string, CaseFactory>> op_cases() {
  std::vector<std::pair<std::string, CaseFactory>> c;
  auto small_shape = [](Rng& rng) { return Shape{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5)}; };

  c.emplace_back("add", [=](Rng& rng, std::uint64_t s) {
    auto sh = small_shape(rng);
    return OpCase{[s](auto& in) { return project(ops::add(in[0], in[1]), s); }, {random_tensor(sh, rng), random_tensor(sh, rng)}};
  });
  c.emplace_back("sub", [=](Rng& rng, std::uint64_t s) {
    auto sh = small_shape(rng);
    return OpCase{[s](auto& in) { return project(ops::sub(in[0], in[1]), s); }, {random_tensor(sh, rng), random_tensor(sh, rng)}};
  });
  c.emplace_back("scale", [=](Rng& rng, std::uint64_t s) {
    const double f = uniform(rng, -3, 3);
    return OpCase{[s, f](auto& in) { return project(ops::scale(in[0], f), s); }, {random_tensor(small_shape(rng), rng)}};
  });
  c.emplace_back("sum", [=](Rng& rng, std::uint64_t) {
    return OpCase{[](auto& in) { return ops::sum(in[0]); }, {random_tensor(small_shape(rng), rng)}};
  });
  c.emplace_back("mean", [=](Rng& rng, std::uint64_t) {
    return OpCase{[](auto& in) { return ops::mean(in[0]); }, {random_tensor(small_shape(rng), rng)}};
  });
  c.emplace_back("add_n", [=](Rng& rng, std::uint64_t) {
    std::vector<Tensor> in;
    for (std::size_t i = 0, n = pick(rng, 1, 4); i < n; ++i) in.push_back(random_tensor({1}, rng));
    return OpCase{[](auto& in) {
                    std::vector<Tensor> sq;
                    for (const auto& t : in) sq.push_back(ops::sq_diff_sum(t, Tensor::scalar(0.3)));
                    return ops::add_n(sq);
                  },
                  in};
  });
  c.emplace_back("reshape", [=](Rng& rng, std::uint64_t s) {
    auto sh = small_shape(rng);
    return OpCase{[s](auto& in) { return project(ops::reshape(in[0], {in[0].numel()}), s); }, {random_tensor(sh, rng)}};
  });
  c.emplace_back("flatten", [=](Rng& rng, std::uint64_t s) {
    return OpCase{[s](auto& in) { return project(ops::flatten(in[0]), s); }, {random_tensor(small_shape(rng), rng)}};
  });
  c.emplace_back("relu", [=](Rng& rng, std::uint64_t s) {
    return OpCase{[s](auto& in) { return project(ops::relu(in[0]), s); }, {away_from_zero(small_shape(rng), rng)}};
  });
  c.emplace_back("maxpool2x2", [=](Rng& rng, std::uint64_t s) {
    Shape sh{pick(rng, 1, 2), pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)};
    return OpCase{[s](auto& in) { return project(ops::maxpool2x2(in[0]), s); }, {distinct_values(sh, rng)}};
  });
  c.emplace_back("upsample2x", [=](Rng& rng, std::uint64_t s) {
    Shape sh{1, pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
    return OpCase{[s](auto& in) { return project(ops::upsample2x(in[0]), s); }, {random_tensor(sh, rng)}};
  });
  c.emplace_back("concat", [=](Rng& rng, std::uint64_t s) {
    const std::size_t axis = pick(rng, 0, 2);
    Shape a{2, 3, 4}, b{2, 3, 4};
    b[axis] = pick(rng, 1, 3);
    return OpCase{[s, axis](auto& in) { return project(ops::concat(in, axis), s); }, {random_tensor(a, rng), random_tensor(b, rng)}};
  });
  c.emplace_back("conv2d", [=](Rng& rng, std::uint64_t s) {
    const std::size_t k = pick(rng, 0, 1) ? 3 : 1;
    const int stride = static_cast<int>(pick(rng, 1, 2));
    const int pad = static_cast<int>(k / 2);
    const std::size_t h = 2 * pick(rng, 2, 4), w = 2 * pick(rng, 2, 4), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    if (stride == 2 && k == 1) {
      // (H - 1) must be even for a 1x1 stride-2 kernel without padding.
      return OpCase{[s](auto& in) { return project(ops::conv2d(in[0], in[1], in[2], 2, 0), s); },
                    {random_tensor({1, ci, h + 1, w + 1}, rng), random_tensor({co, ci, 1, 1}, rng), random_tensor({co}, rng)}};
    }
    const std::size_t hh = stride == 2 ? h + 1 : h, ww = stride == 2 ? w + 1 : w;
    return OpCase{[s, stride, pad](auto& in) { return project(ops::conv2d(in[0], in[1], in[2], stride, pad), s); },
                  {random_tensor({pick(rng, 1, 2), ci, hh, ww}, rng), random_tensor({co, ci, k, k}, rng), random_tensor({co}, rng)}};
  });
  c.emplace_back("linear", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = pick(rng, 1, 4), d = pick(rng, 1, 6), m = pick(rng, 1, 5);
    return OpCase{[s](auto& in) { return project(ops::linear(in[0], in[1], in[2]), s); },
                  {random_tensor({n, d}, rng), random_tensor({d, m}, rng), random_tensor({m}, rng)}};
  });
  c.emplace_back("bilinear_sample", [=](Rng& rng, std::uint64_t s) {
    const std::size_t h = pick(rng, 2, 6), w = pick(rng, 2, 6);
    const double x = uniform(rng, -1, static_cast<double>(w)), y = uniform(rng, -1, static_cast<double>(h));
    return OpCase{[s, x, y](auto& in) { return project(ops::bilinear_sample(in[0], x, y), s); },
                  {random_tensor({pick(rng, 1, 3), h, w}, rng)}};
  });
  c.emplace_back("softmax_cross_entropy", [=](Rng& rng, std::uint64_t) {
    const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 4);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
    return OpCase{[labels](auto& in) { return ops::softmax_cross_entropy(in[0], labels); }, {random_tensor({n, k}, rng, -3, 3)}};
  });
  c.emplace_back("bce_with_logits", [=](Rng& rng, std::uint64_t) {
    const std::size_t n = pick(rng, 1, 8);
    std::vector<double> t(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<double>(pick(rng, 0, 1));
      w[i] = uniform(rng, 0, 1);
    }
    return OpCase{[t, w](auto& in) { return ops::bce_with_logits(in[0], t, w); }, {random_tensor({n}, rng, -4, 4)}};
  });
  c.emplace_back("mse", [=](Rng& rng, std::uint64_t) {
    auto sh = small_shape(rng);
    return OpCase{[](auto& in) { return ops::mse(in[0], in[1]); }, {random_tensor(sh, rng), random_tensor(sh, rng)}};
  });
  c.emplace_back("sq_diff_sum", [=](Rng& rng, std::uint64_t) {
    auto sh = small_shape(rng);
    return OpCase{[](auto& in) { return ops::sq_diff_sum(in[0], in[1]); }, {random_tensor(sh, rng), random_tensor(sh, rng)}};
  });
  c.emplace_back("smooth_l1", [=](Rng& rng, std::uint64_t) {
    const std::size_t n = pick(rng, 1, 8);
    std::vector<double> t(n), w(n);
    auto pred = random_tensor({n}, rng);
    for (std::size_t i = 0; i < n; ++i) {
      // Offsets on either side of the quadratic/linear switch at |x| = 1.
      const double mag = pick(rng, 0, 1) ? uniform(rng, 0.05, 0.9) : uniform(rng, 1.1, 3.0);
      t[i] = pred.data()[i] + (pick(rng, 0, 1) ? mag : -mag);
      w[i] = uniform(rng, 0.1, 1);
    }
    return OpCase{[t, w](auto& in) { return ops::smooth_l1(in[0], t, w); }, {pred}};
  });
  c.emplace_back("roi_align", [=](Rng& rng, std::uint64_t s) {
    const std::size_t h = pick(rng, 3, 8), w = pick(rng, 3, 8);
    const double stride = static_cast<double>(1u << pick(rng, 0, 2));
    std::vector<Box> boxes;
    for (std::size_t i = 0, n = pick(rng, 1, 3); i < n; ++i) boxes.push_back(random_box(rng, w * stride, h * stride));
    return OpCase{[s, boxes, stride](auto& in) { return project(roi_align(in[0], boxes, stride, 3, 2), s); },
                  {random_tensor({1, pick(rng, 1, 3), h, w}, rng)}};
  });
  c.emplace_back("pyramid_roi_align", [=](Rng& rng, std::uint64_t s) {
    auto pyr = random_pyramid(rng, 2, 16, 16);
    std::vector<Box> boxes;
    for (std::size_t i = 0, n = pick(rng, 1, 3); i < n; ++i) boxes.push_back(random_box(rng, 64, 64));
    RoiAlignConfig cfg{3, 2};
    return OpCase{[s, boxes, cfg](auto& in) { return project(pyramid_roi_align(as_pyramid(in, 0), boxes, cfg), s); },
                  pyramid_leaves(pyr)};
  });
  c.emplace_back("level_roi_align", [=](Rng& rng, std::uint64_t s) {
    auto pyr = random_pyramid(rng, 2, 16, 16);
    std::vector<Box> boxes;
    for (std::size_t i = 0, n = pick(rng, 1, 3); i < n; ++i) boxes.push_back(random_box(rng, 64, 64));
    RoiAlignConfig cfg{3, 2};
    return OpCase{[s, boxes, cfg](auto& in) { return project(level_roi_align(as_pyramid(in, 0), boxes, cfg), s); },
                  pyramid_leaves(pyr)};
  });
  c.emplace_back("pyramid_distill_loss", [=](Rng& rng, std::uint64_t) {
    auto st = random_pyramid(rng, 2, 8, 8);
    auto te = random_pyramid(rng, 2, 8, 8);
    auto in = pyramid_leaves(st);
    for (const auto& t : te.levels) in.push_back(t.detach());
    return OpCase{[](auto& in) { return pyramid_distill_loss(as_pyramid(in, 0), as_pyramid(in, kNumLevels)); }, in};
  });
  c.emplace_back("region_distill_loss", [=](Rng& rng, std::uint64_t) {
    const Shape sh{pick(rng, 1, 3), 2, 3, 3};
    return OpCase{[](auto& in) {
                    return region_distill_loss(std::span<const Tensor>(&in[0], 1), std::span<const Tensor>(&in[1], 1));
                  },
                  {random_tensor(sh, rng), random_tensor(sh, rng).detach()}};
  });
  c.emplace_back("logit_distill_loss", [=](Rng& rng, std::uint64_t) {
    const Shape sh{pick(rng, 1, 4), pick(rng, 2, 6)};
    return OpCase{[](auto& in) {
                    return logit_distill_loss(std::span<const Tensor>(&in[0], 1), std::span<const Tensor>(&in[1], 1));
                  },
                  {random_tensor(sh, rng), random_tensor(sh, rng).detach()}};
  });
  return c;
}

}  // namespace

double gradient_rel_error(const ScalarFn& fn, std::vector<Tensor> inputs, const GradcheckOptions& opts, Rng& rng) {
  for (auto& t : inputs) {
    if (t.requires_grad()) t.zero_grad();
  }
  auto loss = fn(inputs);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    if (!t.requires_grad()) {
      analytic.emplace_back();
      continue;
    }
    if (t.has_grad()) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    const auto n = inputs[i].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords);
    }
    for (auto j : coords) {
      auto data = inputs[i].mutable_data();
      const double orig = data[j];
      data[j] = orig + opts.eps;
      const double up = fn(inputs).item();
      data[j] = orig - opts.eps;
      const double down = fn(inputs).item();
      data[j] = orig;
      const double numeric = (up - down) / (2 * opts.eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

std::vector<GradcheckResult> run_op_gradchecks(const GradcheckOptions& opts) {
  std::vector<GradcheckResult> out;
  Rng rng(opts.seed);
  for (const auto& [name, factory] : op_cases()) {
    GradcheckResult r{name, opts.instances, 0.0, opts.tolerance};
    for (std::size_t i = 0; i < opts.instances; ++i) {
      auto c = factory(rng, rng());
      r.max_rel_error = std::max(r.max_rel_error, gradient_rel_error(c.fn, c.inputs, opts, rng));
    }
    out.push_back(r);
  }
  return out;
}

GradcheckResult run_end_to_end_gradcheck(const GradcheckOptions& opts) {
  SceneParams sp;
  sp.height = sp.width = opts.e2e_image;
  sp.max_figure_height = 0.8 * static_cast<double>(opts.e2e_image);
  sp.min_figure_height = 12.0;
  sp.seed = opts.seed;
  auto scene = generate_scene(sp, derive_seed(opts.seed, 99, 0), "gradcheck");
  auto net_cfg = NetConfig::student_default();
  net_cfg.roi.output_size = 3;
  Detector net(net_cfg, derive_seed(opts.seed, 98, 0));

  const auto image = image_tensor(scene.image, scene.height, scene.width);
  const auto anchors = make_anchors(scene.height, scene.width);
  std::vector<Box> gts;
  for (const auto& g : scene.annotations) gts.push_back(g.box);

  // A fixed RoI set (ground truth, jittered copies, random background) keeps
  // the loss a smooth function of the weights.
  Rng rng(derive_seed(opts.seed, 97, 0));
  std::vector<RoI> rois;
  const double size = static_cast<double>(opts.e2e_image);
  for (const auto& g : gts) {
    for (int j = 0; j < 3; ++j) {
      Box b{g.x1 + uniform(rng, -2, 2), g.y1 + uniform(rng, -2, 2), g.x2 + uniform(rng, -2, 2), g.y2 + uniform(rng, -2, 2)};
      rois.push_back({clip_box(b, size, size), 0.5});
    }
  }
  for (int j = 0; j < 6; ++j) rois.push_back({random_box(rng, size, size, 6.0), 0.1});
  Rng sample_rng(derive_seed(opts.seed, 96, 0));
  const auto sample = sample_rois(rois, gts, sample_rng, {16, 0.5, 0.5});

  ScalarFn fn = [&](const std::vector<Tensor>&) {
    const auto pyr = net.fpn(net.backbone(image));
    const auto rpn = net.rpn(pyr);
    auto l_rpn = rpn_loss(rpn, anchors, gts, nullptr);
    const auto head = net.head(net.regions(pyr, sample.boxes));
    auto l_det = detection_loss(head.class_scores, head.box_deltas, sample.labels, sample.targets);
    std::vector<Tensor> terms{l_rpn, l_det};
    return ops::add_n(terms);
  };
  GradcheckOptions o = opts;
  o.max_coords = 4;
  GradcheckResult r{"end_to_end_detection_loss", 1, 0.0, opts.e2e_tolerance};
  Rng probe(derive_seed(opts.seed, 95, 0));
  r.max_rel_error = gradient_rel_error(fn, net.params().tensors(), o, probe);
  return r;
}

}  // namespace hkd
