#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "goodpoint/common.hpp"
#include "goodpoint/rng.hpp"

namespace goodpoint {

// Invertible 3x3 projective transform in pixel units, stored with m(2,2) = 1.
// Maps homogeneous (x, y, 1) from the source image to the warped image.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  static Homography identity() { return Homography(); }

  // Normalizes so m(2,2) = 1 and rejects |det| <= 1e-12.
  static Homography from_matrix(const Eigen::Matrix3d& m);

  const Eigen::Matrix3d& matrix() const { return m_; }

  Homography inverse() const;
  Homography compose(const Homography& rhs) const;  // this ∘ rhs

  // Homogeneous multiply + perspective divide. Throws when |w| < 1e-9.
  Vec2 apply(Vec2 p) const;

 private:
  Eigen::Matrix3d m_;
};

struct HomographyConfig {
  double max_shift_px = 14.0;
  double max_perspective_px = 85.0;
  double max_rotation_rad = 0.08;
};

// Applies h to every point, order preserved, no filtering.
PointSet project_points(const PointSet& points, const Homography& h);

// Keeps points with 0 <= x <= width-1 and 0 <= y <= height-1; second result
// holds the original indices of the survivors.
std::pair<PointSet, std::vector<int>> filter_in_bounds(const PointSet& points, int height,
                                                       int width);

// Random homography for a height x width crop: per-corner jitter within
// ±max_shift_px, keystone shifts of a top/bottom and left/right corner pair
// within ±max_perspective_px, composed with a rotation about the image center
// within ±max_rotation_rad. The returned matrix maps the four source corners
// exactly onto their perturbed positions. Degenerate corner draws are
// resampled up to 16 times before giving up.
Homography sample_homography(const HomographyConfig& cfg, int height, int width, Rng& rng);

// Least-squares homography from point correspondences (normalized DLT).
// Needs at least 4 correspondences in general position.
Homography fit_homography(const PointSet& src, const PointSet& dst);

// Inverse-mapping bilinear resampling; pixels that map outside the source are 0.
template <class T>
Plane<T> warp_plane(const Plane<T>& src, const Homography& h);

Image warp_image(const Image& img, const Homography& h);

// Mask over the warped grid marking pixels whose inverse projection lands
// inside the height x width source rectangle.
ValidityMask valid_mask(int height, int width, const Homography& h);

// 4-neighbor bilinear interpolation; integer coordinates reproduce grid
// values exactly. Coordinates must lie in [0, width-1] x [0, height-1].
template <class T>
T bilinear_sample(const Plane<T>& grid, double x, double y);

std::vector<double> bilinear_sample(const Plane<double>& grid, const PointSet& coords);
std::vector<float> bilinear_sample(const Plane<float>& grid, const PointSet& coords);

// Multi-channel variant over a channels x (h*w) matrix (pixel-major columns).
template <class T>
Eigen::Vector<T, Eigen::Dynamic> bilinear_sample_channels(
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& grid, int height, int width, double x,
    double y);

struct BlurConfig {
  int kernel_size = 5;
  double sigma = 1.0;
};

// Normalized 1-D Gaussian taps for the separable blur.
std::vector<double> gaussian_kernel(const BlurConfig& cfg);

// Separable Gaussian convolution with reflect padding.
template <class T>
Plane<T> gaussian_blur(const Plane<T>& field, const BlurConfig& cfg = {});

// Adjoint of gaussian_blur under the standard inner product; used when
// back-propagating through blurred heatmap differences.
template <class T>
Plane<T> gaussian_blur_transpose(const Plane<T>& field, const BlurConfig& cfg = {});

// Same kernel as warp_image, applied to confidence values.
template <class T>
Plane<T> project_heatmap(const Plane<T>& hm, const Homography& h) {
  return warp_plane(hm, h);
}

// Adjoint of warp_plane: scatters gradient taps back onto the source grid.
template <class T>
Plane<T> warp_plane_transpose(const Plane<T>& grad_out, const Homography& h, int src_height,
                              int src_width);

// ---------------------------------------------------------------------------
// Inline template definitions
// ---------------------------------------------------------------------------

namespace detail {

// Common inverse-mapping loop: f(y, x, sx, sy, inside) per warped pixel.
template <class F>
void for_each_inverse_mapped(int height, int width, const Homography& h, int src_height,
                             int src_width, F&& f) {
  const Eigen::Matrix3d inv = h.inverse().matrix();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double w = inv(2, 0) * x + inv(2, 1) * y + inv(2, 2);
      if (std::abs(w) < 1e-9) {
        f(y, x, 0.0, 0.0, false);
        continue;
      }
      const double sx = (inv(0, 0) * x + inv(0, 1) * y + inv(0, 2)) / w;
      const double sy = (inv(1, 0) * x + inv(1, 1) * y + inv(1, 2)) / w;
      const bool inside =
          sx >= 0.0 && sx <= double(src_width - 1) && sy >= 0.0 && sy <= double(src_height - 1);
      f(y, x, sx, sy, inside);
    }
  }
}

// Unchecked bilinear read; caller guarantees (x, y) in bounds.
template <class T>
T bilinear_unchecked(const Plane<T>& grid, double x, double y) {
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const int x1 = x0 + 1 < grid.width ? x0 + 1 : x0;
  const int y1 = y0 + 1 < grid.height ? y0 + 1 : y0;
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = double(grid.at(y0, x0));
  const double v01 = double(grid.at(y0, x1));
  const double v10 = double(grid.at(y1, x0));
  const double v11 = double(grid.at(y1, x1));
  return T((1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11));
}

}  // namespace detail

template <class T>
Plane<T> warp_plane(const Plane<T>& src, const Homography& h) {
  Plane<T> out(src.height, src.width, T(0));
  detail::for_each_inverse_mapped(src.height, src.width, h, src.height, src.width,
                                  [&](int y, int x, double sx, double sy, bool inside) {
                                    if (inside)
                                      out.at(y, x) = detail::bilinear_unchecked(src, sx, sy);
                                  });
  return out;
}

template <class T>
Plane<T> warp_plane_transpose(const Plane<T>& grad_out, const Homography& h, int src_height,
                              int src_width) {
  Plane<T> grad_src(src_height, src_width, T(0));
  detail::for_each_inverse_mapped(grad_out.height, grad_out.width, h, src_height, src_width,
                                  [&](int y, int x, double sx, double sy, bool inside) {
                                    if (!inside) return;
                                    const T g = grad_out.at(y, x);
                                    if (g == T(0)) return;
                                    const int x0 = int(std::floor(sx));
                                    const int y0 = int(std::floor(sy));
                                    const int x1 = x0 + 1 < src_width ? x0 + 1 : x0;
                                    const int y1 = y0 + 1 < src_height ? y0 + 1 : y0;
                                    const double fx = sx - x0;
                                    const double fy = sy - y0;
                                    grad_src.at(y0, x0) += T((1.0 - fy) * (1.0 - fx)) * g;
                                    grad_src.at(y0, x1) += T((1.0 - fy) * fx) * g;
                                    grad_src.at(y1, x0) += T(fy * (1.0 - fx)) * g;
                                    grad_src.at(y1, x1) += T(fy * fx) * g;
                                  });
  return grad_src;
}

template <class T>
T bilinear_sample(const Plane<T>& grid, double x, double y) {
  if (!(x >= 0.0 && x <= double(grid.width - 1) && y >= 0.0 && y <= double(grid.height - 1)))
    raise_runtime("bilinear_sample: coordinate (" + std::to_string(x) + ", " + std::to_string(y) +
                  ") outside [0," + std::to_string(grid.width - 1) + "]x[0," +
                  std::to_string(grid.height - 1) + "]");
  return detail::bilinear_unchecked(grid, x, y);
}

template <class T>
Eigen::Vector<T, Eigen::Dynamic> bilinear_sample_channels(
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& grid, int height, int width, double x,
    double y) {
  if (!(x >= 0.0 && x <= double(width - 1) && y >= 0.0 && y <= double(height - 1)))
    raise_runtime("bilinear_sample_channels: coordinate outside grid");
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const int x1 = x0 + 1 < width ? x0 + 1 : x0;
  const int y1 = y0 + 1 < height ? y0 + 1 : y0;
  const T fx = T(x - x0);
  const T fy = T(y - y0);
  auto col = [&](int yy, int xx) { return grid.col(Eigen::Index(yy) * width + xx); };
  return (T(1) - fy) * ((T(1) - fx) * col(y0, x0) + fx * col(y0, x1)) +
         fy * ((T(1) - fx) * col(y1, x0) + fx * col(y1, x1));
}

namespace detail {

// 1-D pass with reflect padding along one axis; Transpose scatters instead of
// gathering so the pair of passes forms an exact adjoint.
template <class T, bool Transpose>
Plane<T> blur_axis(const Plane<T>& in, const std::vector<double>& k, bool horizontal) {
  Plane<T> out(in.height, in.width, T(0));
  const int r = int(k.size()) / 2;
  const int n = horizontal ? in.width : in.height;
  auto reflect = [n](int i) {
    // reflect-101: -1 -> 1, n -> n-2; degenerate axes clamp instead
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
  };
  const int other = horizontal ? in.height : in.width;
  for (int a = 0; a < other; ++a) {
    for (int b = 0; b < n; ++b) {
      if constexpr (!Transpose) {
        double acc = 0.0;
        for (int t = -r; t <= r; ++t) {
          const int bb = reflect(b + t);
          acc += k[t + r] * double(horizontal ? in.at(a, bb) : in.at(bb, a));
        }
        (horizontal ? out.at(a, b) : out.at(b, a)) = T(acc);
      } else {
        const double g = double(horizontal ? in.at(a, b) : in.at(b, a));
        if (g == 0.0) continue;
        for (int t = -r; t <= r; ++t) {
          const int bb = reflect(b + t);
          (horizontal ? out.at(a, bb) : out.at(bb, a)) += T(k[t + r] * g);
        }
      }
    }
  }
  return out;
}

}  // namespace detail

template <class T>
Plane<T> gaussian_blur(const Plane<T>& field, const BlurConfig& cfg) {
  const std::vector<double> k = gaussian_kernel(cfg);
  return detail::blur_axis<T, false>(detail::blur_axis<T, false>(field, k, true), k, false);
}

template <class T>
Plane<T> gaussian_blur_transpose(const Plane<T>& field, const BlurConfig& cfg) {
  const std::vector<double> k = gaussian_kernel(cfg);
  return detail::blur_axis<T, true>(detail::blur_axis<T, true>(field, k, false), k, true);
}

}  // namespace goodpoint
