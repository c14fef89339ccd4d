#include "hkd/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace hkd {

namespace {

constexpr double kAspect = 0.41;  // figure width / height
constexpr double kSmallLo = 12.5, kSmallHi = 18.75;
constexpr int kPlacementTries = 50;

using Color = std::array<double, 3>;

struct Canvas {
  std::size_t h, w;
  std::vector<double>& px;

  void put(long y, long x, const Color& c) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return;
    for (std::size_t ch = 0; ch < 3; ++ch) px[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)] = c[ch];
  }

  // Fills pixels whose centres fall inside [x1,x2) x [y1,y2).
  void rect(double x1, double y1, double x2, double y2, const Color& c) {
    for (long y = static_cast<long>(std::ceil(y1 - 0.5)); y + 0.5 < y2; ++y) {
      for (long x = static_cast<long>(std::ceil(x1 - 0.5)); x + 0.5 < x2; ++x) put(y, x, c);
    }
  }

  void ellipse(double cx, double cy, double rx, double ry, const Color& c) {
    for (long y = static_cast<long>(std::floor(cy - ry)); y <= static_cast<long>(std::ceil(cy + ry)); ++y) {
      for (long x = static_cast<long>(std::floor(cx - rx)); x <= static_cast<long>(std::ceil(cx + rx)); ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) put(y, x, c);
      }
    }
  }
};

Color contrasting(const Color& base, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amount(0.3, 0.45);
  std::bernoulli_distribution up(0.5);
  Color c{};
  const double shift = amount(rng) * (up(rng) ? 1.0 : -1.0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double v = base[ch] + shift + std::uniform_real_distribution<double>(-0.08, 0.08)(rng);
    if (v < 0.0 || v > 1.0) v = base[ch] - shift;
    c[ch] = std::clamp(v, 0.0, 1.0);
  }
  return c;
}

void draw_figure(Canvas& cv, const Box& b, const Color& c) {
  const double w = b.width(), h = b.height();
  cv.ellipse(b.x1 + 0.5 * w, b.y1 + 0.09 * h, 0.24 * w, 0.09 * h, c);
  cv.rect(b.x1, b.y1 + 0.17 * h, b.x2, b.y1 + 0.58 * h, c);
  cv.rect(b.x1 + 0.1 * w, b.y1 + 0.58 * h, b.x1 + 0.45 * w, b.y2, c);
  cv.rect(b.x1 + 0.55 * w, b.y1 + 0.58 * h, b.x1 + 0.9 * w, b.y2, c);
}

bool overlaps(const Box& a, const Box& b, double margin) {
  return a.x1 - margin < b.x2 && b.x1 - margin < a.x2 && a.y1 - margin < b.y2 && b.y1 - margin < a.y2;
}

}  // namespace

void SceneParams::validate() const {
  if (height == 0 || width == 0 || height % 32 || width % 32) {
    throw std::invalid_argument("scene size must be a positive multiple of 32");
  }
  if (min_figures < 1 || max_figures < min_figures) throw std::invalid_argument("need 1 <= min_figures <= max_figures");
  if (min_figure_height <= 0 || max_figure_height <= min_figure_height ||
      max_figure_height > static_cast<double>(height) || max_figure_height * kAspect > static_cast<double>(width)) {
    throw std::invalid_argument("figure height range admits no valid figure for this scene size");
  }
  if (occlusion_rate < 0 || occlusion_rate > 1 || small_band_fraction < 0 || small_band_fraction > 1) {
    throw std::invalid_argument("rates must lie in [0,1]");
  }
  if (train_count + test_count == 0) throw std::invalid_argument("dataset must contain at least one scene");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Scene generate_scene(const SceneParams& p, std::uint64_t scene_seed, std::string id) {
  std::mt19937_64 rng(scene_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Scene s;
  s.id = std::move(id);
  s.height = p.height;
  s.width = p.width;
  s.image.assign(3 * p.height * p.width, 0.0);
  Canvas cv{p.height, p.width, s.image};

  // Background: tinted base level, two low-frequency waves, pixel noise.
  Color base{};
  const double level = std::uniform_real_distribution<double>(0.3, 0.7)(rng);
  for (auto& c : base) c = std::clamp(level + std::uniform_real_distribution<double>(-0.08, 0.08)(rng), 0.0, 1.0);
  std::array<double, 6> wave{};
  for (auto& v : wave) v = u01(rng);
  std::normal_distribution<double> noise(0.0, 0.03);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      const double t = 0.06 * std::sin(2 * M_PI * (wave[0] * 2.0 * x / p.width + wave[1])) +
                       0.06 * std::sin(2 * M_PI * (wave[2] * 2.0 * y / p.height + wave[3]));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        s.image[(ch * p.height + y) * p.width + x] = std::clamp(base[ch] + t + noise(rng), 0.0, 1.0);
      }
    }
  }

  // Figures, kept apart so occluders never touch a neighbour.
  std::uniform_int_distribution<int> count(p.min_figures, p.max_figures);
  const int wanted = count(rng);
  std::vector<Box> figures;
  std::vector<double> occlusion;
  for (int f = 0; f < wanted; ++f) {
    for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
      double h;
      if (u01(rng) < p.small_band_fraction) {
        h = std::uniform_real_distribution<double>(std::max(kSmallLo, p.min_figure_height) + 0.05,
                                                   std::min(kSmallHi, p.max_figure_height) - 0.05)(rng);
      } else {
        h = std::uniform_real_distribution<double>(p.min_figure_height, p.max_figure_height)(rng);
      }
      const double w = kAspect * h;
      const double x1 = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.width) - w)(rng);
      const double y1 = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.height) - h)(rng);
      const Box b{x1, y1, x1 + w, y1 + h};
      const bool clash = std::any_of(figures.begin(), figures.end(), [&](const Box& o) { return overlaps(b, o, 4.0); });
      if (clash) continue;
      figures.push_back(b);
      occlusion.push_back(u01(rng) < p.occlusion_rate ? std::uniform_real_distribution<double>(0.15, 0.75)(rng) : 0.0);
      break;
    }
  }
  if (figures.empty()) throw std::runtime_error("scene " + s.id + ": no figure could be placed");

  // Distractors: wide blocks and thin poles away from the figures.
  std::uniform_int_distribution<int> n_distract(0, p.max_distractors);
  const int distractors = n_distract(rng);
  for (int k = 0; k < distractors; ++k) {
    for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
      double w, h;
      if (u01(rng) < 0.5) {
        h = std::uniform_real_distribution<double>(6.0, 24.0)(rng);
        w = h * std::uniform_real_distribution<double>(1.3, 3.0)(rng);
      } else {
        h = std::uniform_real_distribution<double>(16.0, 60.0)(rng);
        w = std::uniform_real_distribution<double>(1.5, 3.5)(rng);
      }
      if (w >= static_cast<double>(p.width) || h >= static_cast<double>(p.height)) continue;
      const double x1 = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.width) - w)(rng);
      const double y1 = std::uniform_real_distribution<double>(0.0, static_cast<double>(p.height) - h)(rng);
      const Box b{x1, y1, x1 + w, y1 + h};
      if (std::any_of(figures.begin(), figures.end(), [&](const Box& o) { return overlaps(b, o, 3.0); })) continue;
      cv.rect(b.x1, b.y1, b.x2, b.y2, contrasting(base, rng));
      break;
    }
  }

  for (std::size_t f = 0; f < figures.size(); ++f) {
    const auto& b = figures[f];
    draw_figure(cv, b, contrasting(base, rng));
    double visibility = 1.0;
    if (occlusion[f] > 0.0) {
      // The bar spans the full figure width, so the hidden share of the box
      // is exactly the covered height fraction.
      const double top = b.y2 - occlusion[f] * b.height();
      cv.rect(b.x1 - 1.0, top, b.x2 + 1.0, std::min(b.y2 + 2.0, static_cast<double>(p.height)), contrasting(base, rng));
      visibility = 1.0 - occlusion[f];
    }
    s.annotations.push_back({b, visibility, false});
  }
  return s;
}

Dataset generate_dataset(const SceneParams& params) {
  params.validate();
  Dataset d;
  d.train.reserve(params.train_count);
  d.test.reserve(params.test_count);
  for (std::size_t i = 0; i < params.train_count; ++i) {
    d.train.push_back(generate_scene(params, derive_seed(params.seed, 1, i), "train" + std::to_string(i)));
  }
  for (std::size_t i = 0; i < params.test_count; ++i) {
    d.test.push_back(generate_scene(params, derive_seed(params.seed, 2, i), "test" + std::to_string(i)));
  }
  return d;
}

void write_ppm(const std::filesystem::path& path, const Scene& scene) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << scene.width << ' ' << scene.height << "\n255\n";
  const auto hw = scene.height * scene.width;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(scene.image[ch * hw + i], 0.0, 1.0) * 255.0))));
    }
  }
}

}  // namespace hkd
