#pragma once

#include <array>
#include <string>
#include <vector>

#include "goodpoint/common.hpp"
#include "goodpoint/rng.hpp"

namespace goodpoint {

enum class NoiseKind {
  additive_gaussian,
  random_brightness,
  additive_shade,
  salt_pepper,
  motion_blur,
  contrast_scale,
};

// The fixed application order of the pipeline.
inline constexpr std::array<NoiseKind, 6> kNoiseOrder = {
    NoiseKind::additive_gaussian, NoiseKind::random_brightness, NoiseKind::additive_shade,
    NoiseKind::salt_pepper,       NoiseKind::motion_blur,       NoiseKind::contrast_scale,
};

NoiseKind noise_kind_from_name(const std::string& name);
std::string noise_kind_name(NoiseKind kind);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct NoisePipelineConfig {
  Range gaussian_sigma{0.0, 0.04};
  Range brightness_delta{-0.15, 0.15};
  Range shade_strength{0.0, 0.4};
  Range salt_pepper_fraction{0.0, 0.02};
  std::vector<int> motion_blur_lengths{3, 5, 7};
  Range contrast_range{0.5, 1.5};
  double skip_probability = 0.5;
  double variance_guard_ratio = 0.10;
};

double image_variance(const Image& img);

// One filter application; output clamped to [0, 1], deterministic given rng.
Image apply_filter(NoiseKind kind, const Image& img, Rng& rng, const NoisePipelineConfig& cfg);

// Filters in kNoiseOrder, each independently skipped with skip_probability.
// A filter whose result drops the variance below variance_guard_ratio times
// the input image's variance is reverted.
Image apply_pipeline(const Image& img, Rng& rng, const NoisePipelineConfig& cfg);

}  // namespace goodpoint
