#pragma once

#include <vector>

#include "goodpoint/geometry.hpp"
#include "goodpoint/model.hpp"

namespace goodpoint {

// Per row of the query set: distance to and index of the nearest point in the
// reference set.
struct GeometricMatch {
  std::vector<double> dist;
  std::vector<int> idx;
};

struct DescriptorMatch {
  std::vector<int> idx;
};

// Exact nearest neighbor by Euclidean coordinate distance; ties by lowest
// index. b must be nonempty.
GeometricMatch match_geometric(const PointSet& a, const PointSet& b);

// Argmax cosine similarity per column of da against columns of db; ties by
// lowest index. Columns must be unit-norm, db nonempty.
template <class T>
DescriptorMatch match_descriptors(const Mat<T>& da, const Mat<T>& db);

// Self-supervision targets: fractional keypoint positions in both frames plus
// the accepted row indices (into the in-bounds-projected set).
struct TargetSet {
  PointSet k_prime;    // frame I
  PointSet k_prime_h;  // frame I_h
  std::vector<int> source_indices;

  std::size_t size() const { return k_prime.size(); }
  bool empty() const { return k_prime.empty(); }
};

template <class T>
struct TargetEstimate {
  TargetSet targets;
  PointSet k_proj;                // in-bounds projections of K
  std::vector<int> kept_indices;  // original K indices of k_proj rows
  GeometricMatch geometric;       // k_proj -> k_h
  DescriptorMatch descriptor;     // d_proj -> d_h
};

// Steps: project K into the warped frame and drop out-of-bounds points; match
// the survivors against K_h by coordinates and by descriptors; accept row i
// when both matchers agree and dist_geom(i) < theta_dist (strict); targets in
// the warped frame are the midpoints of the matched pairs, back-projected
// targets outside the source image are dropped together with their partners.
// d_proj columns must align with the in-bounds survivors of K.
template <class T>
TargetEstimate<T> estimate_targets(const PointSet& k, const PointSet& k_h, const Mat<T>& d_proj,
                                   const Mat<T>& d_h, const Homography& h, double theta_dist,
                                   int src_height, int src_width, int warped_height,
                                   int warped_width);

}  // namespace goodpoint
