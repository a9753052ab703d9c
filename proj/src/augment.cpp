#include "goodpoint/augment.hpp"

#include <algorithm>
#include <cmath>

namespace goodpoint {

NoiseKind noise_kind_from_name(const std::string& name) {
  for (NoiseKind k : kNoiseOrder)
    if (noise_kind_name(k) == name) return k;
  raise_usage("unknown noise filter: " + name);
}

std::string noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::additive_gaussian: return "additive_gaussian";
    case NoiseKind::random_brightness: return "random_brightness";
    case NoiseKind::additive_shade: return "additive_shade";
    case NoiseKind::salt_pepper: return "salt_pepper";
    case NoiseKind::motion_blur: return "motion_blur";
    case NoiseKind::contrast_scale: return "contrast_scale";
  }
  raise_usage("unknown noise filter id");
}

double image_variance(const Image& img) {
  if (img.size() == 0) return 0.0;
  double mean = 0.0;
  for (float v : img.v) mean += v;
  mean /= double(img.size());
  double var = 0.0;
  for (float v : img.v) var += (v - mean) * (v - mean);
  return var / double(img.size());
}

namespace {

float clamp01(double v) { return float(std::clamp(v, 0.0, 1.0)); }

Image additive_gaussian(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  const double sigma = rng.uniform(cfg.gaussian_sigma.lo, cfg.gaussian_sigma.hi);
  Image out = img;
  if (sigma == 0.0) return out;
  for (float& v : out.v) v = clamp01(v + sigma * rng.normal());
  return out;
}

Image random_brightness(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  const double delta = rng.uniform(cfg.brightness_delta.lo, cfg.brightness_delta.hi);
  Image out = img;
  for (float& v : out.v) v = clamp01(v + delta);
  return out;
}

// One elliptical darkening with a soft quadratic falloff.
Image additive_shade(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  const double strength = rng.uniform(cfg.shade_strength.lo, cfg.shade_strength.hi);
  const double cx = rng.uniform(0.0, double(img.width - 1));
  const double cy = rng.uniform(0.0, double(img.height - 1));
  const double ax = rng.uniform(0.15, 0.5) * img.width;
  const double ay = rng.uniform(0.15, 0.5) * img.height;
  Image out = img;
  if (strength == 0.0) return out;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = (x - cx) / ax;
      const double dy = (y - cy) / ay;
      const double r2 = dx * dx + dy * dy;
      if (r2 >= 1.0) continue;
      const double w = 1.0 - r2;
      out.at(y, x) = clamp01(double(out.at(y, x)) * (1.0 - strength * w));
    }
  }
  return out;
}

Image salt_pepper(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  const double fraction = rng.uniform(cfg.salt_pepper_fraction.lo, cfg.salt_pepper_fraction.hi);
  Image out = img;
  for (float& v : out.v) {
    if (rng.uniform() < fraction) v = rng.coin(0.5) ? 1.0f : 0.0f;
  }
  return out;
}

// 1-D line kernel at a random angle, rasterized with bilinear splats.
Image motion_blur(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  if (cfg.motion_blur_lengths.empty()) return img;
  const int len = cfg.motion_blur_lengths[std::size_t(
      rng.uniform_int(std::uint64_t(cfg.motion_blur_lengths.size())))];
  const double angle = rng.uniform(0.0, 3.14159265358979323846);
  const int r = len / 2;
  const int k = 2 * r + 1;
  std::vector<double> kernel(std::size_t(k) * k, 0.0);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (int s = -r; s <= r; ++s) {
    const double px = r + s * dx;
    const double py = r + s * dy;
    const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
    const double fx = px - x0, fy = py - y0;
    auto splat = [&](int yy, int xx, double w) {
      if (yy >= 0 && yy < k && xx >= 0 && xx < k) kernel[std::size_t(yy) * k + xx] += w;
    };
    splat(y0, x0, (1 - fy) * (1 - fx));
    splat(y0, x0 + 1, (1 - fy) * fx);
    splat(y0 + 1, x0, fy * (1 - fx));
    splat(y0 + 1, x0 + 1, fy * fx);
  }
  double sum = 0.0;
  for (double w : kernel) sum += w;
  for (double& w : kernel) w /= sum;

  Image out(img.height, img.width);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
  };
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx)
          acc += kernel[std::size_t(ky + r) * k + (kx + r)] *
                 double(img.at(reflect(y + ky, img.height), reflect(x + kx, img.width)));
      out.at(y, x) = clamp01(acc);
    }
  }
  return out;
}

Image contrast_scale(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  const double scale = rng.uniform(cfg.contrast_range.lo, cfg.contrast_range.hi);
  double mean = 0.0;
  for (float v : img.v) mean += v;
  mean /= double(img.size() > 0 ? img.size() : 1);
  Image out = img;
  for (float& v : out.v) v = clamp01((v - mean) * scale + mean);
  return out;
}

}  // namespace

Image apply_filter(NoiseKind kind, const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  switch (kind) {
    case NoiseKind::additive_gaussian: return additive_gaussian(img, rng, cfg);
    case NoiseKind::random_brightness: return random_brightness(img, rng, cfg);
    case NoiseKind::additive_shade: return additive_shade(img, rng, cfg);
    case NoiseKind::salt_pepper: return salt_pepper(img, rng, cfg);
    case NoiseKind::motion_blur: return motion_blur(img, rng, cfg);
    case NoiseKind::contrast_scale: return contrast_scale(img, rng, cfg);
  }
  raise_usage("unknown noise filter id");
}

Image apply_pipeline(const Image& img, Rng& rng, const NoisePipelineConfig& cfg) {
  const double reference_variance = image_variance(img);
  Image current = img;
  for (NoiseKind kind : kNoiseOrder) {
    if (rng.coin(cfg.skip_probability)) continue;
    Image candidate = apply_filter(kind, current, rng, cfg);
    // Revert a filter that ruins the image (variance guard).
    if (image_variance(candidate) < cfg.variance_guard_ratio * reference_variance) continue;
    current = std::move(candidate);
  }
  return current;
}

}  // namespace goodpoint
