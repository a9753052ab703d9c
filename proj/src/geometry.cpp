#include "goodpoint/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>

namespace goodpoint {

Homography Homography::from_matrix(const Eigen::Matrix3d& m) {
  if (std::abs(m.determinant()) <= 1e-12) raise_runtime("homography is not invertible");
  if (m(2, 2) == 0.0) raise_runtime("homography has zero scale entry m(2,2)");
  Homography h;
  h.m_ = m / m(2, 2);
  return h;
}

Homography Homography::inverse() const {
  return from_matrix(m_.inverse().eval());
}

Homography Homography::compose(const Homography& rhs) const {
  return from_matrix((m_ * rhs.m_).eval());
}

Vec2 Homography::apply(Vec2 p) const {
  const double w = m_(2, 0) * p.x + m_(2, 1) * p.y + m_(2, 2);
  if (std::abs(w) < 1e-9)
    raise_runtime("projection of point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                  ") has near-zero homogeneous w");
  return {(m_(0, 0) * p.x + m_(0, 1) * p.y + m_(0, 2)) / w,
          (m_(1, 0) * p.x + m_(1, 1) * p.y + m_(1, 2)) / w};
}

PointSet project_points(const PointSet& points, const Homography& h) {
  PointSet out;
  out.pts.reserve(points.size());
  out.scores = points.scores;
  for (const Vec2& p : points.pts) out.pts.push_back(h.apply(p));
  return out;
}

std::pair<PointSet, std::vector<int>> filter_in_bounds(const PointSet& points, int height,
                                                       int width) {
  PointSet kept;
  std::vector<int> indices;
  const bool has_scores = points.scores.size() == points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec2& p = points.pts[i];
    if (p.x >= 0.0 && p.x <= double(width - 1) && p.y >= 0.0 && p.y <= double(height - 1)) {
      kept.pts.push_back(p);
      if (has_scores) kept.scores.push_back(points.scores[i]);
      indices.push_back(int(i));
    }
  }
  return {std::move(kept), std::move(indices)};
}

namespace {

// Exact homography through 4 correspondences via the 8x8 linear system.
Eigen::Matrix3d solve_four_point(const std::array<Vec2, 4>& src, const std::array<Vec2, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x, y = src[i].y;
    const double u = dst[i].x, v = dst[i].y;
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) raise_runtime("degenerate corner configuration");
  const Eigen::Matrix<double, 8, 1> hv = lu.solve(b);
  Eigen::Matrix3d m;
  m << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), 1.0;
  return m;
}

}  // namespace

Homography sample_homography(const HomographyConfig& cfg, int height, int width, Rng& rng) {
  const double w1 = double(width - 1);
  const double h1 = double(height - 1);
  const std::array<Vec2, 4> src = {Vec2{0, 0}, Vec2{w1, 0}, Vec2{w1, h1}, Vec2{0, h1}};

  for (int attempt = 0; attempt < 16; ++attempt) {
    std::array<Vec2, 4> dst = src;  // order: tl, tr, br, bl

    // Keystone pair shifts. Vertical: a top or bottom pair moves horizontally
    // in opposite directions; horizontal: a left or right pair moves
    // vertically. Both are drawn every time so "side and/or top or bottom"
    // perturbations can combine.
    const bool top = rng.coin(0.5);
    const double pv = rng.uniform(-cfg.max_perspective_px, cfg.max_perspective_px);
    if (top) {
      dst[0].x += pv;
      dst[1].x -= pv;
    } else {
      dst[3].x += pv;
      dst[2].x -= pv;
    }
    const bool left = rng.coin(0.5);
    const double ph = rng.uniform(-cfg.max_perspective_px, cfg.max_perspective_px);
    if (left) {
      dst[0].y += ph;
      dst[3].y -= ph;
    } else {
      dst[1].y += ph;
      dst[2].y -= ph;
    }

    for (auto& c : dst) {
      c.x += rng.uniform(-cfg.max_shift_px, cfg.max_shift_px);
      c.y += rng.uniform(-cfg.max_shift_px, cfg.max_shift_px);
    }

    const double angle = rng.uniform(-cfg.max_rotation_rad, cfg.max_rotation_rad);
    const double cx = w1 / 2.0, cy = h1 / 2.0;
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    const double c = std::cos(angle), s = std::sin(angle);
    rot(0, 0) = c;
    rot(0, 1) = -s;
    rot(1, 0) = s;
    rot(1, 1) = c;
    rot(0, 2) = cx - c * cx + s * cy;
    rot(1, 2) = cy - s * cx - c * cy;

    try {
      const Eigen::Matrix3d corners = solve_four_point(src, dst);
      return Homography::from_matrix((corners * rot).eval());
    } catch (const Error&) {
      continue;  // degenerate draw, resample
    }
  }
  raise_runtime("sample_homography: 16 degenerate corner draws in a row");
}

Homography fit_homography(const PointSet& src, const PointSet& dst) {
  if (src.size() != dst.size()) raise_runtime("fit_homography: size mismatch");
  const int n = int(src.size());
  if (n < 4) raise_runtime("fit_homography: need at least 4 correspondences");

  // Hartley normalization: translate to centroid, scale mean norm to sqrt(2).
  auto normalizer = [](const PointSet& ps) {
    double mx = 0, my = 0;
    for (const Vec2& p : ps.pts) {
      mx += p.x;
      my += p.y;
    }
    mx /= double(ps.size());
    my /= double(ps.size());
    double mean_dist = 0;
    for (const Vec2& p : ps.pts) mean_dist += std::hypot(p.x - mx, p.y - my);
    mean_dist /= double(ps.size());
    const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 0) = scale;
    t(1, 1) = scale;
    t(0, 2) = -scale * mx;
    t(1, 2) = -scale * my;
    return t;
  };
  const Eigen::Matrix3d ts = normalizer(src);
  const Eigen::Matrix3d td = normalizer(dst);

  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ts * Eigen::Vector3d(src.pts[i].x, src.pts[i].y, 1.0);
    const Eigen::Vector3d q = td * Eigen::Vector3d(dst.pts[i].x, dst.pts[i].y, 1.0);
    a.row(2 * i) << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    a.row(2 * i + 1) << 0, 0, 0, p.x(), p.y(), 1, -q.y() * p.x(), -q.y() * p.y(), -q.y();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  return Homography::from_matrix((td.inverse() * hn * ts).eval());
}

Image warp_image(const Image& img, const Homography& h) { return warp_plane(img, h); }

ValidityMask valid_mask(int height, int width, const Homography& h) {
  ValidityMask mask;
  mask.data = Plane<std::uint8_t>(height, width, 0);
  detail::for_each_inverse_mapped(height, width, h, height, width,
                                  [&](int y, int x, double, double, bool inside) {
                                    if (inside) {
                                      mask.data.at(y, x) = 1;
                                      ++mask.count_nonzero;
                                    }
                                  });
  return mask;
}

std::vector<double> bilinear_sample(const Plane<double>& grid, const PointSet& coords) {
  std::vector<double> out;
  out.reserve(coords.size());
  for (const Vec2& p : coords.pts) out.push_back(bilinear_sample(grid, p.x, p.y));
  return out;
}

std::vector<float> bilinear_sample(const Plane<float>& grid, const PointSet& coords) {
  std::vector<float> out;
  out.reserve(coords.size());
  for (const Vec2& p : coords.pts) out.push_back(bilinear_sample(grid, p.x, p.y));
  return out;
}

std::vector<double> gaussian_kernel(const BlurConfig& cfg) {
  if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0)
    raise_runtime("blur kernel size must be odd and positive");
  const int r = cfg.kernel_size / 2;
  std::vector<double> k(cfg.kernel_size);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * double(i) * double(i) / (cfg.sigma * cfg.sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace goodpoint
