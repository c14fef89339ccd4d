#include "hkd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hkd/ops.hpp"

namespace hkd {

namespace {

std::string stage_name(int k) { return "backbone.c" + std::to_string(k + 2); }

void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

// Takes up to `n` of `candidates`, randomly if rng is given, else in order.
std::vector<std::size_t> take(std::vector<std::size_t> candidates, std::size_t n, std::mt19937_64* rng) {
  if (candidates.size() > n) {
    if (rng) shuffle_indices(candidates, *rng);
    candidates.resize(n);
    std::sort(candidates.begin(), candidates.end());
  }
  return candidates;
}

}  // namespace

const char* role_name(Role role) { return role == Role::teacher ? "teacher" : "student"; }

NetConfig NetConfig::teacher_default() {
  NetConfig c;
  c.role = Role::teacher;
  c.widths = {16, 32, 64, 128};
  c.blocks = {2, 2, 2, 2};
  c.pyramid_width = 32;
  c.head_hidden = 128;
  c.logit_width = 32;
  return c;
}

NetConfig NetConfig::student_default() {
  NetConfig c;
  c.role = Role::student;
  c.widths = {8, 16, 32, 64};
  c.blocks = {1, 1, 1, 1};
  c.pyramid_width = 32;
  c.head_hidden = 32;
  c.logit_width = 32;
  return c;
}

void NetConfig::validate() const {
  for (int k = 0; k < 4; ++k) {
    if (widths[k] <= 0) throw ShapeError("NetConfig: stage widths must be positive");
    if (blocks[k] < 0) throw ShapeError("NetConfig: block counts must be nonnegative");
  }
  if (pyramid_width <= 0 || head_hidden <= 0 || logit_width <= 0) throw ShapeError("NetConfig: widths must be positive");
  if (roi.output_size <= 0 || roi.samples <= 0) throw ShapeError("NetConfig: RoIAlign sizes must be positive");
}

std::size_t NetConfig::head_input_width() const {
  const auto channels = static_cast<std::size_t>(pyramid_width) * (pyramid_roi_align ? kNumLevels : 1);
  return channels * static_cast<std::size_t>(roi.output_size * roi.output_size);
}

Tensor& ParamStore::add(const std::string& name, Shape shape, double init_std, std::mt19937_64& rng) {
  if (index_.count(name)) throw ShapeError("duplicate parameter " + name);
  std::vector<double> values(shape_numel(shape), 0.0);
  if (init_std > 0) {
    std::normal_distribution<double> dist(0.0, init_std);
    for (auto& v : values) v = dist(rng);
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, Tensor::from(std::move(shape), std::move(values), true));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter " + name);
  return entries_[it->second].second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParamStore::set_requires_grad(bool flag) {
  for (auto& e : entries_) e.second.set_requires_grad(flag);
}

std::vector<NamedTensor> ParamStore::to_named() const {
  std::vector<NamedTensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) {
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return out;
}

void ParamStore::load_named(const std::vector<NamedTensor>& named) {
  if (named.size() != entries_.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(named.size()) + " tensors, network expects " +
                          std::to_string(entries_.size()));
  }
  for (const auto& e : named) {
    auto it = index_.find(e.name);
    if (it == index_.end()) throw CheckpointError("checkpoint tensor " + e.name + " is not a parameter of this network");
    auto& t = entries_[it->second].second;
    if (t.shape() != e.shape) {
      throw CheckpointError("checkpoint tensor " + e.name + " has shape " + shape_str(e.shape) + ", expected " +
                            shape_str(t.shape()));
    }
    std::copy(e.values.begin(), e.values.end(), t.mutable_data().begin());
  }
}

Detector::Detector(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto conv_param = [&](const std::string& name, int out, int in, int k, double gain) {
    const double fan_in = static_cast<double>(in * k * k);
    const auto o = static_cast<std::size_t>(out), i = static_cast<std::size_t>(in), kk = static_cast<std::size_t>(k);
    params_.add(name + ".w", {o, i, kk, kk}, gain * std::sqrt(2.0 / fan_in), rng);
    params_.add(name + ".b", {o}, 0.0, rng);
  };
  auto fc_param = [&](const std::string& name, std::size_t in, std::size_t out, double std) {
    params_.add(name + ".w", {in, out}, std, rng);
    params_.add(name + ".b", {out}, 0.0, rng);
  };

  conv_param("backbone.stem", cfg_.widths[0], 3, 3, 1.0);
  int in = cfg_.widths[0];
  for (int k = 0; k < 4; ++k) {
    const auto s = stage_name(k);
    conv_param(s + ".trans", cfg_.widths[k], in, 3, 1.0);
    for (int b = 0; b < cfg_.blocks[k]; ++b) {
      conv_param(s + ".block" + std::to_string(b) + ".conv1", cfg_.widths[k], cfg_.widths[k], 3, 1.0);
      conv_param(s + ".block" + std::to_string(b) + ".conv2", cfg_.widths[k], cfg_.widths[k], 3, 0.5);
    }
    in = cfg_.widths[k];
  }
  const int d = cfg_.pyramid_width;
  for (int k = 0; k < 4; ++k) {
    conv_param("fpn.lateral" + std::to_string(k + 2), d, cfg_.widths[k], 1, 1.0);
    if (k < 3) conv_param("fpn.smooth" + std::to_string(k + 2), d, d, 3, 1.0);
  }
  conv_param("rpn.conv", d, d, 3, 1.0);
  params_.add("rpn.cls.w", {1, static_cast<std::size_t>(d), 1, 1}, 0.01, rng);
  params_.add("rpn.cls.b", {1}, 0.0, rng);
  params_.add("rpn.box.w", {4, static_cast<std::size_t>(d), 1, 1}, 0.01, rng);
  params_.add("rpn.box.b", {4}, 0.0, rng);

  const auto head_in = cfg_.head_input_width();
  const auto hidden = static_cast<std::size_t>(cfg_.head_hidden);
  const auto logit = static_cast<std::size_t>(cfg_.logit_width);
  fc_param("head.fc1", head_in, hidden, std::sqrt(2.0 / static_cast<double>(head_in)));
  fc_param("head.fc2", hidden, logit, std::sqrt(2.0 / static_cast<double>(hidden)));
  fc_param("head.cls", logit, 2, 0.01);
  fc_param("head.box", logit, 4, 0.001);
}

Tensor Detector::conv(const Tensor& x, const std::string& name, int pad) const {
  return ops::conv2d(x, params_.get(name + ".w"), params_.get(name + ".b"), 1, pad);
}

BackboneFeatures Detector::backbone(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("backbone: expected image [1,3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(2) % 32 || image.dim(3) % 32) {
    throw ShapeError("backbone: image size " + shape_str(image.shape()) + " is not divisible by 32");
  }
  BackboneFeatures out;
  auto x = ops::maxpool2x2(ops::relu(conv(image, "backbone.stem", 1)));
  for (int k = 0; k < 4; ++k) {
    const auto s = stage_name(k);
    x = ops::relu(conv(ops::maxpool2x2(x), s + ".trans", 1));
    for (int b = 0; b < cfg_.blocks[k]; ++b) {
      const auto blk = s + ".block" + std::to_string(b);
      auto y = conv(ops::relu(conv(x, blk + ".conv1", 1)), blk + ".conv2", 1);
      x = ops::relu(ops::add(x, y));
    }
    out.levels[static_cast<std::size_t>(k)] = x;
  }
  return out;
}

FeaturePyramid Detector::fpn(const BackboneFeatures& feats) const {
  FeaturePyramid out;
  auto top = conv(feats[5], "fpn.lateral5", 0);
  out.levels[3] = top;
  for (int level = 4; level >= 2; --level) {
    auto merged = ops::add(conv(feats[level], "fpn.lateral" + std::to_string(level), 0), ops::upsample2x(top));
    top = conv(merged, "fpn.smooth" + std::to_string(level), 1);
    out.levels[static_cast<std::size_t>(level - kMinLevel)] = top;
  }
  return out;
}

RpnOutput Detector::rpn(const FeaturePyramid& pyramid) const {
  RpnOutput out;
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    auto h = ops::relu(conv(pyramid.levels[i], "rpn.conv", 1));
    out.objectness[i] = conv(h, "rpn.cls", 0);
    out.deltas[i] = conv(h, "rpn.box", 0);
  }
  return out;
}

Tensor Detector::regions(const FeaturePyramid& pyramid, std::span<const Box> rois) const {
  return regions(pyramid, rois, cfg_.pyramid_roi_align);
}

Tensor Detector::regions(const FeaturePyramid& pyramid, std::span<const Box> rois, bool pyramid_mode) const {
  return region_features(pyramid, rois, pyramid_mode, cfg_.roi);
}

HeadOutput Detector::head(const Tensor& region) const {
  auto x = region.rank() == 2 ? region : ops::flatten(region);
  if (x.dim(1) != cfg_.head_input_width()) {
    throw ShapeError("head: region width " + std::to_string(x.dim(1)) + " does not match head input " +
                     std::to_string(cfg_.head_input_width()));
  }
  HeadOutput out;
  auto h = ops::relu(ops::linear(x, params_.get("head.fc1.w"), params_.get("head.fc1.b")));
  out.logit = ops::relu(ops::linear(h, params_.get("head.fc2.w"), params_.get("head.fc2.b")));
  out.class_scores = ops::linear(out.logit, params_.get("head.cls.w"), params_.get("head.cls.b"));
  out.box_deltas = ops::linear(out.logit, params_.get("head.box.w"), params_.get("head.box.b"));
  return out;
}

void Detector::save(const std::filesystem::path& path) const { save_checkpoint(path, params_.to_named()); }

void Detector::load(const std::filesystem::path& path) { params_.load_named(load_checkpoint(path)); }

std::size_t parameter_count(const NetConfig& cfg) { return Detector(cfg, 0).params().count(); }

std::vector<RoI> generate_proposals(const RpnOutput& rpn, const std::vector<LevelAnchors>& anchors,
                                    const ProposalConfig& cfg, double img_w, double img_h) {
  if (anchors.size() != kNumLevels) throw ShapeError("generate_proposals: expected anchors for 4 levels");
  struct Candidate {
    double logit;
    std::size_t level, index;
  };
  std::vector<Candidate> cands;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    const auto& obj = rpn.objectness[l];
    if (obj.numel() != anchors[l].boxes.size() || rpn.deltas[l].numel() != 4 * anchors[l].boxes.size()) {
      throw ShapeError("generate_proposals: RPN output does not match anchors at level " + std::to_string(l + 2));
    }
    auto v = obj.data();
    for (std::size_t i = 0; i < v.size(); ++i) cands.push_back({v[i], l, i});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.logit > b.logit; });
  if (cands.size() > cfg.pre_nms_top_k) cands.resize(cfg.pre_nms_top_k);

  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    const auto hw = anchors[c.level].boxes.size();
    auto dv = rpn.deltas[c.level].data();
    const Deltas d{dv[c.index], dv[hw + c.index], dv[2 * hw + c.index], dv[3 * hw + c.index]};
    auto box = clip_box(decode_deltas(anchors[c.level].boxes[c.index], d), img_w, img_h);
    if (box.width() < cfg.min_size || box.height() < cfg.min_size) continue;
    boxes.push_back(box);
    scores.push_back(1.0 / (1.0 + std::exp(-c.logit)));
  }
  auto keep = nms(boxes, scores, cfg.nms_iou);
  if (keep.size() > cfg.post_nms_top_k) keep.resize(cfg.post_nms_top_k);
  std::vector<RoI> out;
  out.reserve(keep.size());
  for (auto k : keep) out.push_back({boxes[k], scores[k]});
  return out;
}

AnchorAssignment assign_anchors(std::span<const Box> anchors, std::span<const Box> gts, double pos_iou,
                                double neg_iou) {
  AnchorAssignment a;
  a.labels.assign(anchors.size(), -1);
  a.matched_gt.assign(anchors.size(), -1);
  if (gts.empty()) {
    std::fill(a.labels.begin(), a.labels.end(), 0);
    return a;
  }
  std::vector<double> best_for_gt(gts.size(), 0.0);
  std::vector<double> best_for_anchor(anchors.size(), 0.0);
  std::vector<double> overlaps(anchors.size() * gts.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(anchors[i], gts[g]);
      overlaps[i * gts.size() + g] = o;
      if (o > best_for_anchor[i]) {
        best_for_anchor[i] = o;
        a.matched_gt[i] = static_cast<int>(g);
      }
      best_for_gt[g] = std::max(best_for_gt[g], o);
    }
  }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (best_for_anchor[i] <= neg_iou) a.labels[i] = 0;
    if (best_for_anchor[i] >= pos_iou) a.labels[i] = 1;
  }
  // Every GT keeps its best-overlapping anchor(s) as positives.
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (best_for_gt[g] <= 0.0) continue;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (overlaps[i * gts.size() + g] == best_for_gt[g]) {
        a.labels[i] = 1;
        a.matched_gt[i] = static_cast<int>(g);
      }
    }
  }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (a.labels[i] != 1) a.matched_gt[i] = -1;
  }
  return a;
}

Tensor rpn_loss(const RpnOutput& rpn, const std::vector<LevelAnchors>& anchors, std::span<const Box> gts,
                std::mt19937_64* rng, const RpnLossConfig& cfg) {
  if (anchors.size() != kNumLevels) throw ShapeError("rpn_loss: expected anchors for 4 levels");
  std::vector<Box> all;
  std::vector<std::size_t> level_offset;
  for (const auto& la : anchors) {
    level_offset.push_back(all.size());
    all.insert(all.end(), la.boxes.begin(), la.boxes.end());
  }
  const auto assignment = assign_anchors(all, gts);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (assignment.labels[i] == 1) pos.push_back(i);
    if (assignment.labels[i] == 0) neg.push_back(i);
  }
  const auto max_pos = static_cast<std::size_t>(std::floor(cfg.batch * cfg.positive_fraction));
  pos = take(std::move(pos), max_pos, rng);
  neg = take(std::move(neg), cfg.batch - pos.size(), rng);
  const double n_sampled = static_cast<double>(pos.size() + neg.size());

  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    const auto hw = anchors[l].boxes.size();
    const auto lo = level_offset[l], hi = lo + hw;
    std::vector<double> cls_t(hw, 0.0), cls_w(hw, 0.0), box_t(4 * hw, 0.0), box_w(4 * hw, 0.0);
    bool any_cls = false, any_box = false;
    for (auto i : neg) {
      if (i >= lo && i < hi) {
        cls_w[i - lo] = 1.0 / n_sampled;
        any_cls = true;
      }
    }
    for (auto i : pos) {
      if (i < lo || i >= hi) continue;
      const auto j = i - lo;
      cls_t[j] = 1.0;
      cls_w[j] = 1.0 / n_sampled;
      const auto d = encode_deltas(all[i], gts[static_cast<std::size_t>(assignment.matched_gt[i])]);
      for (std::size_t c = 0; c < 4; ++c) {
        box_t[c * hw + j] = d[c];
        box_w[c * hw + j] = 1.0 / n_sampled;
      }
      any_cls = any_box = true;
    }
    if (any_cls) terms.push_back(ops::bce_with_logits(rpn.objectness[l], cls_t, cls_w));
    if (any_box) terms.push_back(ops::smooth_l1(rpn.deltas[l], box_t, box_w));
  }
  return ops::add_n(terms);
}

RoiSample sample_rois(std::span<const RoI> proposals, std::span<const Box> gts, std::mt19937_64& rng,
                      const RoiSampleConfig& cfg) {
  std::vector<Box> cands;
  cands.reserve(proposals.size() + gts.size());
  for (const auto& p : proposals) cands.push_back(p.box);
  cands.insert(cands.end(), gts.begin(), gts.end());

  std::vector<std::size_t> pos, neg;
  std::vector<int> best_gt(cands.size(), -1);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(cands[i], gts[g]);
      if (o > best) {
        best = o;
        best_gt[i] = static_cast<int>(g);
      }
    }
    (best >= cfg.positive_iou ? pos : neg).push_back(i);
  }
  const auto max_pos = static_cast<std::size_t>(std::floor(cfg.batch * cfg.positive_fraction));
  pos = take(std::move(pos), max_pos, &rng);
  neg = take(std::move(neg), cfg.batch - pos.size(), &rng);

  RoiSample s;
  for (auto i : pos) {
    s.boxes.push_back(cands[i]);
    s.labels.push_back(1);
    auto d = encode_deltas(cands[i], gts[static_cast<std::size_t>(best_gt[i])]);
    for (std::size_t c = 0; c < 4; ++c) d[c] /= kHeadDeltaStd[c];
    s.targets.push_back(d);
  }
  for (auto i : neg) {
    s.boxes.push_back(cands[i]);
    s.labels.push_back(0);
    s.targets.push_back({0, 0, 0, 0});
  }
  return s;
}

Tensor detection_loss(const Tensor& class_scores, const Tensor& box_deltas, std::span<const int> labels,
                      std::span<const Deltas> targets) {
  const auto r = labels.size();
  if (class_scores.rank() != 2 || class_scores.dim(0) != r || class_scores.dim(1) != 2) {
    throw ShapeError("detection_loss: class scores " + shape_str(class_scores.shape()) + " for " + std::to_string(r) +
                     " RoIs");
  }
  if (box_deltas.rank() != 2 || box_deltas.dim(0) != r || box_deltas.dim(1) != 4 || targets.size() != r) {
    throw ShapeError("detection_loss: box deltas/targets do not match the RoI count");
  }
  auto cls = ops::softmax_cross_entropy(class_scores, labels);
  std::vector<double> t(4 * r, 0.0), w(4 * r, 0.0);
  bool any_pos = false;
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] != 1) continue;
    any_pos = true;
    for (std::size_t c = 0; c < 4; ++c) {
      t[4 * i + c] = targets[i][c];
      w[4 * i + c] = 1.0 / static_cast<double>(r);
    }
  }
  if (!any_pos) return cls;
  return ops::add(cls, ops::smooth_l1(box_deltas, t, w));
}

std::vector<Detection> detect(const Detector& net, const Tensor& image, const DetectConfig& cfg) {
  NoGradGuard no_grad;
  const auto h = image.dim(2), w = image.dim(3);
  const auto pyramid = net.fpn(net.backbone(image));
  const auto rpn = net.rpn(pyramid);
  const auto anchors = make_anchors(h, w);
  const auto proposals = generate_proposals(rpn, anchors, cfg.proposals, static_cast<double>(w), static_cast<double>(h));
  if (proposals.empty()) return {};
  std::vector<Box> rois;
  for (const auto& p : proposals) rois.push_back(p.box);
  const auto out = net.head(net.regions(pyramid, rois));
  const auto prob = ops::softmax_rows(out.class_scores);
  auto dv = out.box_deltas.data();
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    Deltas d{};
    for (std::size_t c = 0; c < 4; ++c) d[c] = dv[4 * i + c] * kHeadDeltaStd[c];
    auto box = clip_box(decode_deltas(rois[i], d), static_cast<double>(w), static_cast<double>(h));
    const double score = prob[2 * i + 1];
    if (!box.valid() || score < cfg.min_score) continue;
    boxes.push_back(box);
    scores.push_back(score);
  }
  auto keep = nms(boxes, scores, cfg.nms_iou);
  if (keep.size() > cfg.max_detections) keep.resize(cfg.max_detections);
  std::vector<Detection> dets;
  for (auto k : keep) dets.push_back({boxes[k], scores[k]});
  return dets;
}

Tensor image_tensor(std::span<const double> planar, std::size_t height, std::size_t width) {
  if (planar.size() != 3 * height * width) throw ShapeError("image_tensor: expected 3*H*W values");
  std::vector<double> v(planar.begin(), planar.end());
  for (auto& x : v) x -= 0.5;
  return Tensor::from({1, 3, height, width}, std::move(v));
}

}  // namespace hkd
