#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hkd/boxes.hpp"

namespace hkd {

/// Synthetic pedestrian benchmark parameters.
struct SceneParams {
  std::size_t train_count = 400;
  std::size_t test_count = 100;
  std::size_t height = 96;
  std::size_t width = 160;
  int min_figures = 1;
  int max_figures = 3;
  double occlusion_rate = 0.3;
  double min_figure_height = 10.0;
  double max_figure_height = 56.0;
  // Fraction of figures drawn in the small height band (12.5, 18.75).
  double small_band_fraction = 0.35;
  int max_distractors = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Scene {
  std::string id;
  std::size_t height = 0, width = 0;
  std::vector<double> image;  // planar [3, H, W], values in [0, 1]
  std::vector<GTBox> annotations;
};

struct Dataset {
  std::vector<Scene> train;
  std::vector<Scene> test;
};

/// One scene from its own seed: textured background, pedestrian-shaped
/// figures (w:h = 0.41) with optional occluding bars over their lower part,
/// and non-pedestrian distractors. Visibility is the analytic un-occluded
/// fraction of each figure's box.
Scene generate_scene(const SceneParams& params, std::uint64_t scene_seed, std::string id);

/// Deterministic under params.seed; each scene uses its own derived seed.
Dataset generate_dataset(const SceneParams& params);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

void write_ppm(const std::filesystem::path& path, const Scene& scene);

}  // namespace hkd
