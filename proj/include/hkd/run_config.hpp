#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "hkd/detector.hpp"
#include "hkd/scene.hpp"
#include "hkd/training.hpp"

namespace hkd {

struct EvalConfig {
  double iou = 0.5;
  // Subset height thresholds are multiplied by this (scenes are 4x smaller than the benchmark).
  double height_scale = 0.25;
  DetectConfig detect{};
};

/// TrainConfig defaults with distillation weights rescaled for the synthetic
/// benchmark (pd 0.05, rd 0.3, ld 0.3), where the paper's 0.5/30/30 swamp
/// the detection loss.
TrainConfig desk_train_config();

/// Everything that determines a run. Parsed from a flat "key = value" file
/// with dotted keys; '#' starts a comment.
struct RunConfig {
  SceneParams dataset{};
  NetConfig teacher = NetConfig::teacher_default();
  NetConfig student = NetConfig::student_default();
  TrainConfig train = desk_train_config();
  EvalConfig eval{};
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3, 4, 5};
  std::vector<int> ablate_rows{1, 2, 3, 4, 5, 6, 7, 8};
  std::filesystem::path out_dir = "runs";

  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Applies one assignment; throws ConfigError on an unknown key or bad value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text form; parse_run_config(write_run_config(c)) == c.
std::string write_run_config(const RunConfig& cfg);

}  // namespace hkd
