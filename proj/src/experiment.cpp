#include "hkd/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "hkd/checkpoint.hpp"
#include "hkd/training.hpp"

namespace hkd {

namespace {

constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

double subset_mr(const std::vector<ImageResult>& images, Subset subset, const EvalConfig& cfg, EvalCurve& curve) {
  std::vector<ImageResult> filtered;
  std::size_t counted = 0;
  for (const auto& img : images) {
    filtered.push_back({img.detections, subset_filter(img.ground_truth, subset, cfg.height_scale)});
    for (const auto& g : filtered.back().ground_truth) counted += g.ignore ? 0 : 1;
  }
  if (counted == 0) return kUndefined;
  curve = mr_fppi_curve(filtered, images.size(), cfg.iou);
  return curve.log_avg_mr;
}

EvalOutcome score(const std::vector<ImageResult>& images, const EvalConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("evaluation needs at least one image");
  EvalOutcome out;
  out.mr.reasonable = subset_mr(images, Subset::reasonable, cfg, out.reasonable);
  out.mr.small = subset_mr(images, Subset::small, cfg, out.small);
  return out;
}

const char* mark(bool on) { return on ? "\xE2\x9C\x93" : "-"; }

}  // namespace

std::string format_percent(double mr) {
  if (std::isnan(mr)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * mr);
  return buf;
}

AnnotationsById annotations_of(std::span<const Scene> scenes) {
  AnnotationsById out;
  for (const auto& s : scenes) out[s.id] = s.annotations;
  return out;
}

EvalOutcome evaluate_model(const Detector& net, std::span<const Scene> scenes, const EvalConfig& cfg) {
  std::vector<ImageResult> images;
  DetectionsById dets;
  for (const auto& s : scenes) {
    auto found = detect(net, image_tensor(s.image, s.height, s.width), cfg.detect);
    dets[s.id] = found;
    images.push_back({std::move(found), s.annotations});
  }
  auto out = score(images, cfg);
  out.detections = std::move(dets);
  return out;
}

EvalOutcome evaluate_detections(const DetectionsById& dets, const AnnotationsById& gts, const EvalConfig& cfg) {
  for (const auto& [id, _] : dets) {
    if (!gts.count(id)) throw std::invalid_argument("detections reference unknown image '" + id + "'");
  }
  std::vector<ImageResult> images;
  for (const auto& [id, boxes] : gts) {
    auto it = dets.find(id);
    images.push_back({it == dets.end() ? std::vector<Detection>{} : it->second, boxes});
  }
  auto out = score(images, cfg);
  out.detections = dets;
  return out;
}

const std::array<AblationRow, 8>& ablation_rows() {
  static const std::array<AblationRow, 8> rows{{
      {1, false, false, false, false},
      {2, false, false, false, true},
      {3, false, false, true, true},
      {4, false, true, false, false},
      {5, false, true, false, true},
      {6, false, true, true, true},
      {7, true, true, true, false},
      {8, true, true, true, true},
  }};
  return rows;
}

NetConfig row_student(const RunConfig& cfg, const AblationRow& row) {
  auto net = cfg.student;
  net.pyramid_roi_align = row.pyramid_roi_align;
  return net;
}

TrainConfig row_train(const RunConfig& cfg, const AblationRow& row, std::uint64_t seed) {
  auto train = cfg.train;
  train.seed = seed;
  train.distill.pd = row.pd;
  train.distill.rd = row.rd;
  train.distill.ld = row.ld;
  train.distill.pyramid_roi_align = row.pyramid_roi_align;
  return train;
}

SubsetMetrics AblationReport::mean(int row) const {
  SubsetMetrics m{0.0, 0.0};
  for (const auto& s : seeds) {
    m.reasonable += s.rows.at(row).mr.reasonable;
    m.small += s.rows.at(row).mr.small;
  }
  m.reasonable /= static_cast<double>(seeds.size());
  m.small /= static_cast<double>(seeds.size());
  return m;
}

AblationReport run_ablation(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                            const LogFn& log) {
  cfg.validate();
  AblationReport report;
  report.rows = cfg.ablate_rows;
  report.teacher_params = parameter_count(cfg.teacher);
  report.student_params = parameter_count(row_student(cfg, ablation_rows()[7]));
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };

  for (auto seed : cfg.ablate_seeds) {
    SeedReport sr;
    sr.seed = seed;
    const auto dir = out_dir / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(dir);

    auto teacher_train = cfg.train;
    teacher_train.seed = seed;
    teacher_train.distill.pd = teacher_train.distill.rd = teacher_train.distill.ld = false;
    const auto teacher_ckpt = dir / "teacher.ckpt";
    auto teacher = train_teacher(data.train, cfg.teacher, teacher_train, teacher_ckpt).model;
    teacher.params().set_requires_grad(false);
    sr.teacher = {evaluate_model(teacher, data.test, cfg.eval).mr, file_sha256(teacher_ckpt)};
    say("seed " + std::to_string(seed) + " teacher: MR-reasonable " + format_percent(sr.teacher.mr.reasonable) +
        " MR-small " + format_percent(sr.teacher.mr.small));

    for (int num : cfg.ablate_rows) {
      const auto& row = ablation_rows()[static_cast<std::size_t>(num - 1)];
      const auto ckpt = dir / ("row" + std::to_string(num) + ".ckpt");
      auto student = train_detector(row_student(cfg, row), data.train, row_train(cfg, row, seed), &teacher).model;
      student.save(ckpt);
      sr.rows[num] = {evaluate_model(student, data.test, cfg.eval).mr, file_sha256(ckpt)};
      say("seed " + std::to_string(seed) + " row " + std::to_string(num) + ": MR-reasonable " +
          format_percent(sr.rows[num].mr.reasonable) + " MR-small " + format_percent(sr.rows[num].mr.small));
    }
    report.seeds.push_back(std::move(sr));
  }
  return report;
}

std::string ablation_table(const AblationReport& report) {
  std::ostringstream os;
  os << "Num\tPD\tRD\tLD\tPyRoIAlign\tMR-reasonable\tMR-small\n";
  for (int num : report.rows) {
    const auto& r = ablation_rows()[static_cast<std::size_t>(num - 1)];
    const auto m = report.mean(num);
    os << num << '\t' << mark(r.pd) << '\t' << mark(r.rd) << '\t' << mark(r.ld) << '\t' << mark(r.pyramid_roi_align)
       << '\t' << format_percent(m.reasonable) << '\t' << format_percent(m.small) << '\n';
  }
  return os.str();
}

std::string ablation_seed_table(const AblationReport& report) {
  std::ostringstream os;
  os << "seed\tmodel\tMR-reasonable\tMR-small\tsha256\n";
  for (const auto& s : report.seeds) {
    os << s.seed << "\tteacher\t" << format_percent(s.teacher.mr.reasonable) << '\t' << format_percent(s.teacher.mr.small)
       << '\t' << s.teacher.checkpoint_sha256 << '\n';
    for (const auto& [num, m] : s.rows) {
      os << s.seed << "\trow" << num << '\t' << format_percent(m.mr.reasonable) << '\t' << format_percent(m.mr.small)
         << '\t' << m.checkpoint_sha256 << '\n';
    }
  }
  return os.str();
}

}  // namespace hkd
