#include "goodpoint/matching.hpp"

#include <cmath>

namespace goodpoint {

GeometricMatch match_geometric(const PointSet& a, const PointSet& b) {
  if (b.empty()) raise_runtime("match_geometric: reference set is empty");
  GeometricMatch m;
  m.dist.reserve(a.size());
  m.idx.reserve(a.size());
  for (const Vec2& p : a.pts) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double dx = p.x - b.pts[j].x;
      const double dy = p.y - b.pts[j].y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        best_j = int(j);
      }
    }
    m.dist.push_back(std::sqrt(best));
    m.idx.push_back(best_j);
  }
  return m;
}

template <class T>
DescriptorMatch match_descriptors(const Mat<T>& da, const Mat<T>& db) {
  if (db.cols() == 0) raise_runtime("match_descriptors: reference set is empty");
  if (da.rows() != db.rows() && da.cols() > 0)
    raise_runtime("match_descriptors: descriptor dimension mismatch");
  DescriptorMatch m;
  m.idx.reserve(std::size_t(da.cols()));
  // Dense similarity; ties resolved to the lowest index by strict comparison.
  const Mat<T> sim = db.transpose() * da;  // (M x N): column i = similarities of da_i
  for (Eigen::Index i = 0; i < da.cols(); ++i) {
    Eigen::Index best_j = 0;
    T best = sim(0, i);
    for (Eigen::Index j = 1; j < db.cols(); ++j) {
      if (sim(j, i) > best) {
        best = sim(j, i);
        best_j = j;
      }
    }
    m.idx.push_back(int(best_j));
  }
  return m;
}

template <class T>
TargetEstimate<T> estimate_targets(const PointSet& k, const PointSet& k_h, const Mat<T>& d_proj,
                                   const Mat<T>& d_h, const Homography& h, double theta_dist,
                                   int src_height, int src_width, int warped_height,
                                   int warped_width) {
  TargetEstimate<T> est;
  auto [k_proj, kept] = filter_in_bounds(project_points(k, h), warped_height, warped_width);
  est.k_proj = std::move(k_proj);
  est.kept_indices = std::move(kept);
  if (Eigen::Index(est.k_proj.size()) != d_proj.cols())
    raise_runtime("estimate_targets: d_proj must align with in-bounds projected points");
  if (est.k_proj.empty() || k_h.empty()) return est;

  est.geometric = match_geometric(est.k_proj, k_h);
  est.descriptor = match_descriptors(d_proj, d_h);

  const Homography h_inv = h.inverse();
  for (std::size_t i = 0; i < est.k_proj.size(); ++i) {
    if (est.geometric.idx[i] != est.descriptor.idx[i]) continue;
    if (!(est.geometric.dist[i] < theta_dist)) continue;
    const Vec2 mid = 0.5 * (est.k_proj.pts[i] + k_h.pts[std::size_t(est.geometric.idx[i])]);
    const Vec2 back = h_inv.apply(mid);
    // Back-projections leaving the source image drop the whole pair.
    if (!(back.x >= 0.0 && back.x <= double(src_width - 1) && back.y >= 0.0 &&
          back.y <= double(src_height - 1)))
      continue;
    est.targets.k_prime.push_back(back);
    est.targets.k_prime_h.push_back(mid);
    est.targets.source_indices.push_back(int(i));
  }
  return est;
}

template DescriptorMatch match_descriptors<float>(const Mat<float>&, const Mat<float>&);
template DescriptorMatch match_descriptors<double>(const Mat<double>&, const Mat<double>&);
template TargetEstimate<float> estimate_targets<float>(const PointSet&, const PointSet&,
                                                       const Mat<float>&, const Mat<float>&,
                                                       const Homography&, double, int, int, int,
                                                       int);
template TargetEstimate<double> estimate_targets<double>(const PointSet&, const PointSet&,
                                                         const Mat<double>&, const Mat<double>&,
                                                         const Homography&, double, int, int, int,
                                                         int);

}  // namespace goodpoint
