#include "hkd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace hkd {

namespace {

constexpr double kVisibilityReasonable = 0.65;
constexpr double kVisibilitySmallMin = 0.20;
constexpr double kHeightMin = 50.0;
constexpr double kHeightSmallMax = 75.0;
constexpr double kMissFloor = 1e-10;

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  return order;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

// Reads "id x1 y1 x2 y2 value" records; blank lines and '#' comments skipped.
template <typename F>
void read_records(const std::filesystem::path& path, F&& on_record) {
  auto is = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    Box b;
    double value = 0;
    if (!(ls >> id >> b.x1 >> b.y1 >> b.x2 >> b.y2 >> value)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed record");
    }
    if (!b.valid()) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": box needs x2>x1, y2>y1");
    on_record(id, b, value);
  }
}

}  // namespace

Subset parse_subset(const std::string& name) {
  if (name == "reasonable") return Subset::reasonable;
  if (name == "small") return Subset::small;
  throw std::invalid_argument("unknown subset '" + name + "' (expected reasonable or small)");
}

const char* subset_name(Subset subset) { return subset == Subset::reasonable ? "reasonable" : "small"; }

bool in_subset(const GTBox& gt, Subset subset, double height_scale) {
  const double h = gt.height();
  const double v = gt.visibility;
  if (subset == Subset::reasonable) return h > kHeightMin * height_scale && v > kVisibilityReasonable;
  return h > kHeightMin * height_scale && h < kHeightSmallMax * height_scale && v > kVisibilitySmallMin &&
         v < kVisibilityReasonable;
}

std::vector<GTBox> subset_filter(std::vector<GTBox> gts, Subset subset, double height_scale) {
  for (auto& g : gts) {
    if (!in_subset(g, subset, height_scale)) g.ignore = true;
  }
  return gts;
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const GTBox> gts, double iou_threshold) {
  MatchResult r;
  r.detections.assign(dets.size(), MatchKind::false_positive);
  r.gt_matched.assign(gts.size(), false);
  for (auto d : score_order(dets)) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].ignore || r.gt_matched[g]) continue;
      const double o = iou(dets[d].box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      r.gt_matched[static_cast<std::size_t>(best)] = true;
      r.detections[d] = MatchKind::true_positive;
      continue;
    }
    for (const auto& g : gts) {
      if (g.ignore && iou(dets[d].box, g.box) >= iou_threshold) {
        r.detections[d] = MatchKind::ignored;
        break;
      }
    }
  }
  return r;
}

EvalCurve mr_fppi_curve(std::span<const ImageResult> images, std::size_t num_images, double iou_threshold) {
  if (num_images == 0) throw std::invalid_argument("mr_fppi_curve: num_images must be positive");
  std::size_t total_gt = 0;
  struct Scored {
    double score;
    MatchKind kind;
  };
  std::vector<Scored> all;
  for (const auto& img : images) {
    for (const auto& g : img.ground_truth) total_gt += g.ignore ? 0 : 1;
    auto m = match_detections(img.detections, img.ground_truth, iou_threshold);
    for (auto d : score_order(img.detections)) all.push_back({img.detections[d].score, m.detections[d]});
  }
  if (total_gt == 0) throw std::invalid_argument("mr_fppi_curve: no non-ignore ground truth, miss rate undefined");
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.score > b.score; });

  EvalCurve curve;
  const double n = static_cast<double>(num_images);
  const double gt = static_cast<double>(total_gt);
  if (all.empty()) {
    curve.points.push_back({0.0, 1.0, 0.0});
  }
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].kind == MatchKind::true_positive) ++tp;
    if (all[i].kind == MatchKind::false_positive) ++fp;
    const bool last_of_score = i + 1 == all.size() || all[i + 1].score != all[i].score;
    if (last_of_score) curve.points.push_back({static_cast<double>(fp) / n, static_cast<double>(total_gt - tp) / gt, all[i].score});
  }
  curve.log_avg_mr = log_average_miss_rate(curve);
  return curve;
}

std::vector<double> mr_reference_points() {
  std::vector<double> refs;
  for (int i = 0; i < 9; ++i) refs.push_back(std::pow(10.0, -2.0 + 2.0 * i / 8.0));
  return refs;
}

double log_average_miss_rate(const EvalCurve& curve) {
  if (curve.points.empty()) throw std::invalid_argument("log_average_miss_rate: empty curve");
  double acc = 0.0;
  bool all_zero = true;
  const auto refs = mr_reference_points();
  for (double ref : refs) {
    double m = curve.points.front().miss_rate;
    for (const auto& p : curve.points) {
      if (p.fppi <= ref) m = p.miss_rate;
      else break;
    }
    all_zero = all_zero && m == 0.0;
    acc += std::log(std::max(m, kMissFloor));
  }
  // The floor only guards the logarithm; a curve that never misses scores 0.
  if (all_zero) return 0.0;
  return std::exp(acc / static_cast<double>(refs.size()));
}

void write_curve_tsv(const std::filesystem::path& path, const EvalCurve& curve) {
  auto os = open_out(path);
  os << "fppi\tmiss_rate\tscore\n";
  for (const auto& p : curve.points) os << p.fppi << '\t' << p.miss_rate << '\t' << p.score << '\n';
}

DetectionsById read_detections(const std::filesystem::path& path) {
  DetectionsById out;
  read_records(path, [&](const std::string& id, const Box& b, double score) { out[id].push_back({b, score}); });
  return out;
}

AnnotationsById read_annotations(const std::filesystem::path& path) {
  AnnotationsById out;
  read_records(path, [&](const std::string& id, const Box& b, double vis) {
    if (vis < 0.0 || vis > 1.0) throw std::runtime_error(path.string() + ": visibility outside [0,1]");
    out[id].push_back({b, vis, false});
  });
  return out;
}

void write_detections(const std::filesystem::path& path, const DetectionsById& dets) {
  auto os = open_out(path);
  for (const auto& [id, list] : dets) {
    for (const auto& d : list) os << id << ' ' << d.box.x1 << ' ' << d.box.y1 << ' ' << d.box.x2 << ' ' << d.box.y2 << ' ' << d.score << '\n';
  }
}

void write_annotations(const std::filesystem::path& path, const AnnotationsById& gts) {
  auto os = open_out(path);
  for (const auto& [id, list] : gts) {
    for (const auto& g : list) {
      os << id << ' ' << g.box.x1 << ' ' << g.box.y1 << ' ' << g.box.x2 << ' ' << g.box.y2 << ' ' << g.visibility << '\n';
    }
  }
}

}  // namespace hkd
