#pragma once

// Independent brute-force references used only by tests. These deliberately
// share no code with the production kernels: plain loops, scalar math, and
// naive data structures.

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "goodpoint/common.hpp"

namespace goodpoint::oracles {

// Homogeneous 3x3 multiply + divide, written out by hand.
Vec2 project_point(const double m[3][3], Vec2 p);

// Per-point bound check.
std::vector<int> filter_in_bounds_indices(const std::vector<Vec2>& pts, int height, int width);

// Scalar 4-neighbor bilinear interpolation.
double bilinear(const std::vector<double>& grid, int height, int width, double x, double y);

// Per-pixel inverse projection and bound test.
std::vector<std::uint8_t> valid_mask(int height, int width, const double h_matrix[3][3]);

// O(N*M) nearest neighbor by coordinates: returns (distance, index) rows.
void brute_match_geometric(const std::vector<Vec2>& a, const std::vector<Vec2>& b,
                           std::vector<double>& dist, std::vector<int>& idx);

// O(N*M) argmax cosine scan over descriptor rows.
std::vector<int> brute_match_descriptors(const std::vector<std::vector<double>>& a,
                                         const std::vector<std::vector<double>>& b);

// Steps 1-4 of target estimation, re-derived with the naive pieces above.
struct BruteTargets {
  std::vector<Vec2> k_prime;
  std::vector<Vec2> k_prime_h;
  std::vector<int> accepted;  // indices into the in-bounds projected rows
};
BruteTargets brute_targets(const std::vector<Vec2>& k, const std::vector<Vec2>& k_h,
                           const std::vector<std::vector<double>>& d_proj,
                           const std::vector<std::vector<double>>& d_h, const double h[3][3],
                           const double h_inv[3][3], double theta_dist, int src_h, int src_w,
                           int warped_h, int warped_w);

// Lattice-point disk counting.
double brute_coverage(const std::vector<Vec2>& points, int height, int width, double radius);

// Symmetrized repeatability with an explicit pairwise distance scan.
double brute_repeatability(const std::vector<Vec2>& k_a, const std::vector<Vec2>& k_b,
                           const double h_ab[3][3], const double h_ba[3][3], int height_a,
                           int width_a, int height_b, int width_b, double eps);

// Central finite differences of f around x.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double step = 1e-5);

}  // namespace goodpoint::oracles
