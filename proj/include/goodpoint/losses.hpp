#pragma once

#include "goodpoint/geometry.hpp"
#include "goodpoint/matching.hpp"
#include "goodpoint/model.hpp"
#include "goodpoint/rng.hpp"

namespace goodpoint {

struct LossWeights {
  double lambda_descriptor = 1.0;  // λ1
  double lambda_detector = 1.0;    // λ2
  double lambda_heatmap = 2000.0;  // λ_h, lives inside the heatmap term
};

struct LossReport {
  double total = 0.0;
  double keypoints = 0.0;
  double heatmaps = 0.0;
  double gt = 0.0;
  double wrong = 0.0;
  double random = 0.0;
  long long n_gt = 0;
  long long n_wrong = 0;
  long long n_random_pairs = 0;
  long long n_mask = 0;
  long long n_targets = 0;
  bool keypoints_skipped = false;
};

// Negative log-likelihood of the estimated targets, bilinear-sampled at
// fractional positions, probabilities clamped below at 1e-12; the two image
// terms are averaged with weight 1/2. Empty targets yield 0 with skipped set.
// When dp/dph are given, gradients scaled by upstream are accumulated.
template <class T>
double keypoint_loss(const Plane<T>& p, const Plane<T>& p_h, const TargetSet& targets,
                     bool* skipped = nullptr, Plane<T>* dp = nullptr, Plane<T>* dp_h = nullptr,
                     double upstream = 1.0);

// λ_h-weighted masked MSE between the blurred homographic projection of p and
// the blurred p_h, over the validity mask of h. Throws when the mask is empty.
template <class T>
double heatmap_loss(const Plane<T>& p, const Plane<T>& p_h, const Homography& h, double lambda_h,
                    const BlurConfig& blur = {}, long long* n_mask_out = nullptr,
                    Plane<T>* dp = nullptr, Plane<T>* dp_h = nullptr, double upstream = 1.0);

struct DescriptorLossParts {
  double gt = 0.0;
  double wrong = 0.0;
  double random = 0.0;
  long long n_gt = 0;
  long long n_wrong = 0;
  long long n_random_pairs = 0;
  std::vector<std::vector<int>> shuffles;  // one constrained shuffle per round
};

// Row maps of d_h with no row sent to its own geometric nearest neighbor.
std::vector<int> derangement_shuffle(const std::vector<int>& idx_geom, int m, Rng& rng);

// Three-part descriptor objective on unit-norm columns:
//   gt     : mean (1 - cos) over all geometric pairs (or only gt_rows when a
//            subset is given),
//   wrong  : mean cos over pairs that disagree with the descriptor matcher and
//            are farther than wrong_min_dist,
//   random : mean cos against n_random constrained shuffles of d_h.
// Pass precomputed shuffles to reuse them (finite-difference checks); with
// d_dproj/d_dh given, gradients scaled by upstream are accumulated.
template <class T>
DescriptorLossParts descriptor_loss(const Mat<T>& d_proj, const Mat<T>& d_h,
                                    const GeometricMatch& gm, const DescriptorMatch& dm, Rng& rng,
                                    int n_random, double wrong_min_dist = 7.0,
                                    const std::vector<std::vector<int>>* shuffles = nullptr,
                                    Mat<T>* d_dproj = nullptr, Mat<T>* d_dh = nullptr,
                                    double upstream = 1.0,
                                    const std::vector<int>* gt_rows = nullptr);

LossReport total_loss(double keypoints, bool keypoints_skipped, long long n_targets,
                      double heatmaps, long long n_mask, const DescriptorLossParts& desc,
                      const LossWeights& weights);

}  // namespace goodpoint
