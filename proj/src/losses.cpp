#include "goodpoint/losses.hpp"

#include <algorithm>
#include <cmath>

namespace goodpoint {

namespace {

constexpr double kLogClamp = 1e-12;

// One image term of the keypoint loss: mean -log p over bilinear taps, with
// tap-weighted gradient scatter.
template <class T>
double nll_term(const Plane<T>& p, const PointSet& targets, Plane<T>* dp, double upstream) {
  double sum = 0.0;
  const double inv_n = 1.0 / double(targets.size());
  for (const Vec2& t : targets.pts) {
    const int x0 = int(std::floor(t.x));
    const int y0 = int(std::floor(t.y));
    const int x1 = x0 + 1 < p.width ? x0 + 1 : x0;
    const int y1 = y0 + 1 < p.height ? y0 + 1 : y0;
    const double fx = t.x - x0;
    const double fy = t.y - y0;
    const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    const int ys[4] = {y0, y0, y1, y1};
    const int xs[4] = {x0, x1, x0, x1};
    double value = 0.0;
    for (int k = 0; k < 4; ++k) value += w[k] * double(p.at(ys[k], xs[k]));
    const double clamped = std::max(value, kLogClamp);
    sum += -std::log(clamped);
    if (dp) {
      const double g = upstream * inv_n * (-1.0 / clamped);
      for (int k = 0; k < 4; ++k) dp->at(ys[k], xs[k]) += T(g * w[k]);
    }
  }
  return sum * inv_n;
}

}  // namespace

template <class T>
double keypoint_loss(const Plane<T>& p, const Plane<T>& p_h, const TargetSet& targets,
                     bool* skipped, Plane<T>* dp, Plane<T>* dp_h, double upstream) {
  if (targets.empty()) {
    if (skipped) *skipped = true;
    return 0.0;
  }
  if (skipped) *skipped = false;
  for (const Vec2& t : targets.k_prime.pts)
    if (!(t.x >= 0 && t.x <= p.width - 1 && t.y >= 0 && t.y <= p.height - 1))
      raise_runtime("keypoint_loss: target outside heatmap");
  for (const Vec2& t : targets.k_prime_h.pts)
    if (!(t.x >= 0 && t.x <= p_h.width - 1 && t.y >= 0 && t.y <= p_h.height - 1))
      raise_runtime("keypoint_loss: warped target outside heatmap");
  const double a = nll_term(p, targets.k_prime, dp, 0.5 * upstream);
  const double b = nll_term(p_h, targets.k_prime_h, dp_h, 0.5 * upstream);
  return 0.5 * (a + b);
}

template <class T>
double heatmap_loss(const Plane<T>& p, const Plane<T>& p_h, const Homography& h, double lambda_h,
                    const BlurConfig& blur, long long* n_mask_out, Plane<T>* dp, Plane<T>* dp_h,
                    double upstream) {
  if (p.height != p_h.height || p.width != p_h.width)
    raise_runtime("heatmap_loss: shape mismatch");
  const ValidityMask mask = valid_mask(p_h.height, p_h.width, h);
  if (n_mask_out) *n_mask_out = mask.count_nonzero;
  if (mask.count_nonzero == 0)
    raise_runtime("heatmap_loss: empty validity mask (degenerate homography)");

  const Plane<T> warped = project_heatmap(p, h);
  const Plane<T> bw = gaussian_blur(warped, blur);
  const Plane<T> bh = gaussian_blur(p_h, blur);

  double sum = 0.0;
  for (std::size_t i = 0; i < bw.size(); ++i) {
    if (!mask.data.v[i]) continue;
    const double d = double(bw.v[i]) - double(bh.v[i]);
    sum += d * d;
  }
  const double scale = lambda_h / double(mask.count_nonzero);
  if (dp || dp_h) {
    Plane<T> g(p.height, p.width, T(0));
    const double gscale = upstream * 2.0 * scale;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask.data.v[i]) g.v[i] = T(gscale * (double(bw.v[i]) - double(bh.v[i])));
    const Plane<T> gb = gaussian_blur_transpose(g, blur);
    if (dp_h)
      for (std::size_t i = 0; i < gb.size(); ++i) dp_h->v[i] -= gb.v[i];
    if (dp) {
      const Plane<T> gw = warp_plane_transpose(gb, h, p.height, p.width);
      for (std::size_t i = 0; i < gw.size(); ++i) dp->v[i] += gw.v[i];
    }
  }
  return scale * sum;
}

std::vector<int> derangement_shuffle(const std::vector<int>& idx_geom, int m, Rng& rng) {
  const int n = int(idx_geom.size());
  if (m < 2) raise_runtime("derangement_shuffle: need at least 2 reference rows");
  std::vector<int> perm(m);
  for (int j = 0; j < m; ++j) perm[j] = j;
  rng.shuffle(perm);
  std::vector<int> sigma(n);
  for (int i = 0; i < n; ++i) sigma[i] = perm[i % m];
  for (int i = 0; i < n; ++i) {
    if (sigma[i] != idx_geom[i]) continue;
    bool swapped = false;
    for (int step = 1; step < n && !swapped; ++step) {
      const int j = (i + step) % n;
      if (sigma[j] != idx_geom[i] && sigma[i] != idx_geom[j]) {
        std::swap(sigma[i], sigma[j]);
        swapped = true;
      }
    }
    // No swap keeps it a permutation; redraw this entry away from the
    // forbidden index instead.
    if (!swapped) sigma[i] = (idx_geom[i] + 1 + int(rng.uniform_int(std::uint64_t(m - 1)))) % m;
  }
  return sigma;
}

template <class T>
DescriptorLossParts descriptor_loss(const Mat<T>& d_proj, const Mat<T>& d_h,
                                    const GeometricMatch& gm, const DescriptorMatch& dm, Rng& rng,
                                    int n_random, double wrong_min_dist,
                                    const std::vector<std::vector<int>>* shuffles, Mat<T>* d_dproj,
                                    Mat<T>* d_dh, double upstream, const std::vector<int>* gt_rows) {
  DescriptorLossParts parts;
  const int n = int(d_proj.cols());
  const int m = int(d_h.cols());
  if (n == 0) return parts;
  if (int(gm.idx.size()) != n || int(dm.idx.size()) != n)
    raise_runtime("descriptor_loss: match vectors must align with d_proj columns");

  auto accumulate_pair = [&](int i, int j, double coeff) {
    // coeff is d(loss)/d(cos) for this pair.
    if (d_dproj) d_dproj->col(i) += T(upstream * coeff) * d_h.col(j);
    if (d_dh) d_dh->col(j) += T(upstream * coeff) * d_proj.col(i);
  };

  // L_gt over geometric pairs; no acceptance filter unless gt_rows narrows it.
  std::vector<int> all_rows;
  if (!gt_rows) {
    all_rows.resize(std::size_t(n));
    for (int i = 0; i < n; ++i) all_rows[std::size_t(i)] = i;
  }
  const std::vector<int>& rows = gt_rows ? *gt_rows : all_rows;
  parts.n_gt = (long long)(rows.size());
  for (int i : rows) {
    const int j = gm.idx[std::size_t(i)];
    const double g = double(d_proj.col(i).dot(d_h.col(j)));
    parts.gt += (1.0 - g) / double(rows.size());
    accumulate_pair(i, j, -1.0 / double(rows.size()));
  }

  // L_wrong over descriptor-mismatched pairs that are reasonably distant.
  std::vector<int> wrong;
  for (int i = 0; i < n; ++i)
    if (gm.idx[std::size_t(i)] != dm.idx[std::size_t(i)] &&
        gm.dist[std::size_t(i)] > wrong_min_dist)
      wrong.push_back(i);
  parts.n_wrong = (long long)(wrong.size());
  for (int i : wrong) {
    const int j = gm.idx[std::size_t(i)];
    parts.wrong += double(d_proj.col(i).dot(d_h.col(j))) / double(wrong.size());
    accumulate_pair(i, j, 1.0 / double(wrong.size()));
  }

  // L_random against constrained shuffles; needs at least 2 reference rows.
  if (m >= 2 && n_random > 0) {
    if (shuffles) {
      parts.shuffles = *shuffles;
    } else {
      for (int r = 0; r < n_random; ++r) parts.shuffles.push_back(derangement_shuffle(gm.idx, m, rng));
    }
    const double denom = double(parts.shuffles.size()) * double(n);
    parts.n_random_pairs = (long long)(parts.shuffles.size()) * n;
    for (const auto& sigma : parts.shuffles) {
      for (int i = 0; i < n; ++i) {
        const int j = sigma[std::size_t(i)];
        parts.random += double(d_proj.col(i).dot(d_h.col(j))) / denom;
        accumulate_pair(i, j, 1.0 / denom);
      }
    }
  }
  return parts;
}

LossReport total_loss(double keypoints, bool keypoints_skipped, long long n_targets,
                      double heatmaps, long long n_mask, const DescriptorLossParts& desc,
                      const LossWeights& weights) {
  LossReport r;
  r.keypoints = keypoints;
  r.keypoints_skipped = keypoints_skipped;
  r.n_targets = n_targets;
  r.heatmaps = heatmaps;
  r.n_mask = n_mask;
  r.gt = desc.gt;
  r.wrong = desc.wrong;
  r.random = desc.random;
  r.n_gt = desc.n_gt;
  r.n_wrong = desc.n_wrong;
  r.n_random_pairs = desc.n_random_pairs;
  r.total = weights.lambda_descriptor * (r.gt + r.wrong + r.random) +
            weights.lambda_detector * (r.keypoints + r.heatmaps);
  return r;
}

#define GOODPOINT_INSTANTIATE_LOSSES(T)                                                          \
  template double keypoint_loss<T>(const Plane<T>&, const Plane<T>&, const TargetSet&, bool*,    \
                                   Plane<T>*, Plane<T>*, double);                                \
  template double heatmap_loss<T>(const Plane<T>&, const Plane<T>&, const Homography&, double,   \
                                  const BlurConfig&, long long*, Plane<T>*, Plane<T>*, double);  \
  template DescriptorLossParts descriptor_loss<T>(                                               \
      const Mat<T>&, const Mat<T>&, const GeometricMatch&, const DescriptorMatch&, Rng&, int,    \
      double, const std::vector<std::vector<int>>*, Mat<T>*, Mat<T>*, double,                    \
      const std::vector<int>*);

GOODPOINT_INSTANTIATE_LOSSES(float)
GOODPOINT_INSTANTIATE_LOSSES(double)

}  // namespace goodpoint
