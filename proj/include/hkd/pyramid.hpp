#pragma once

#include <array>
#include <stdexcept>

#include "hkd/tensor.hpp"

namespace hkd {

inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 5;
inline constexpr int kNumLevels = kMaxLevel - kMinLevel + 1;

inline int level_stride(int level) { return 1 << level; }

/// Backbone stages C2..C5 at strides 4, 8, 16, 32.
struct BackboneFeatures {
  std::array<Tensor, kNumLevels> levels;

  const Tensor& operator[](int level) const { return levels.at(static_cast<std::size_t>(level - kMinLevel)); }
};

/// Pyramid levels P2..P5, each [1, d, H/stride, W/stride] with a shared width d.
struct FeaturePyramid {
  std::array<Tensor, kNumLevels> levels;

  const Tensor& operator[](int level) const { return levels.at(static_cast<std::size_t>(level - kMinLevel)); }
  std::size_t width() const { return levels[0].dim(1); }
};

}  // namespace hkd
