#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hkd/evaluation.hpp"
#include "hkd/run_config.hpp"

namespace hkd {

struct SubsetMetrics {
  double reasonable = 1.0;
  double small = 1.0;
};

struct EvalOutcome {
  SubsetMetrics mr;
  EvalCurve reasonable;
  EvalCurve small;
  DetectionsById detections;
};

/// Runs the detector over `scenes` and scores both subsets.
EvalOutcome evaluate_model(const Detector& net, std::span<const Scene> scenes, const EvalConfig& cfg);

/// Scores precomputed detections against annotations. Images present only
/// in the annotations count as having no detections.
EvalOutcome evaluate_detections(const DetectionsById& dets, const AnnotationsById& gts, const EvalConfig& cfg);

AnnotationsById annotations_of(std::span<const Scene> scenes);

/// One configuration of the supervision ablation.
struct AblationRow {
  int num;
  bool pd, rd, ld, pyramid_roi_align;
};

/// The eight configurations in table order: the plain student, the student
/// with Pyramid RoIAlign, then LD, RD, RD+Py, RD+LD+Py, PD+RD+LD and all four.
const std::array<AblationRow, 8>& ablation_rows();

/// Student network and training configuration of one row under a run seed.
NetConfig row_student(const RunConfig& cfg, const AblationRow& row);
TrainConfig row_train(const RunConfig& cfg, const AblationRow& row, std::uint64_t seed);

struct RunMetrics {
  SubsetMetrics mr;
  std::string checkpoint_sha256;
};

struct SeedReport {
  std::uint64_t seed = 0;
  RunMetrics teacher;
  std::map<int, RunMetrics> rows;
};

struct AblationReport {
  std::vector<int> rows;
  std::vector<SeedReport> seeds;
  std::size_t teacher_params = 0;
  std::size_t student_params = 0;

  double parameter_ratio() const { return static_cast<double>(teacher_params) / static_cast<double>(student_params); }
  /// Mean over seeds for one row.
  SubsetMetrics mean(int row) const;
};

using LogFn = std::function<void(const std::string&)>;

/// For each seed: trains a teacher, then every requested row's student
/// (distilled from that teacher), evaluating all of them on the test split.
/// Checkpoints go to out_dir/seed_<s>/.
AblationReport run_ablation(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir,
                            const LogFn& log = {});

/// Tab-separated table: Num PD RD LD PyRoIAlign MR-reasonable MR-small, MR in percent.
std::string ablation_table(const AblationReport& report);
/// Per-seed table including the teacher and checkpoint hashes.
std::string ablation_seed_table(const AblationReport& report);

std::string format_percent(double mr);

}  // namespace hkd
