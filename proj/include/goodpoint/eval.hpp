#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "goodpoint/features_io.hpp"
#include "goodpoint/geometry.hpp"
#include "goodpoint/keypoints.hpp"
#include "goodpoint/model.hpp"

namespace goodpoint {

// Ground truth relating an evaluation pair: an exact homography, or a dense
// correspondence map (nearest-pixel lookup a->b, fitted homography for the
// reverse direction).
class CorrespondenceGt {
 public:
  static CorrespondenceGt identity();
  static CorrespondenceGt from_homography(const Homography& h);
  static CorrespondenceGt from_map(CorrespondenceMapData map);

  std::optional<Vec2> map_a_to_b(Vec2 p) const;
  std::optional<Vec2> map_b_to_a(Vec2 p) const;

  // Directions swapped; used by the symmetry property tests.
  CorrespondenceGt inverted() const;

  const Homography& homography() const { return h_; }

 private:
  bool use_map_ = false;
  bool map_forward_ = true;  // whether the stored map covers a->b
  Homography h_;             // exact, or fitted from the map
  std::shared_ptr<const CorrespondenceMapData> map_;
};

struct EvalConfig {
  std::vector<double> eps_px{3.0, 5.0};  // correct-match thresholds
  double coverage_radius_px = 25.0;
  double theta_keypoint = 0.021;
  double theta_desc = 0.8;
  double nms_radius = 4.0;
  bool apply_nms = true;
  int max_keypoints = 0;  // 0 = keep all; else top-k by score for both images
};

// Fraction of in-bounds projected detections with a counterpart within eps,
// averaged over the a->b and b->a directions.
double repeatability(const PointSet& k_a, const PointSet& k_b, const CorrespondenceGt& gt,
                     int height_a, int width_a, int height_b, int width_b, double eps,
                     bool* flagged = nullptr);

struct MatchRecord {
  int idx_a = 0;
  int idx_b = 0;
  double similarity = 0.0;
  bool correct = false;
};

struct PrecisionResult {
  double precision = 0.0;
  bool flagged = false;  // no matches passed theta_desc in either direction
  std::vector<MatchRecord> ab, ba;
  PointSet correct_in_a, correct_in_b;  // correctly matched keypoints per image
};

// Nearest-neighbor descriptor matches filtered at theta_desc; a match counts
// as correct when the ground-truth projection of the source keypoint lies
// within eps of the matched target. Precision is averaged over directions.
PrecisionResult match_and_precision(const PointSet& k_a, const Mat<float>& d_a,
                                    const PointSet& k_b, const Mat<float>& d_b,
                                    const CorrespondenceGt& gt, int height_a, int width_a,
                                    int height_b, int width_b, double eps, double theta_desc);

// Fraction of pixels whose center lies within radius (Euclidean, inclusive)
// of a correctly matched keypoint. With a region mask, both the covered count
// and the denominator are restricted to nonzero mask pixels.
double coverage(const PointSet& correct_matches, int height, int width, double radius,
                const Plane<std::uint8_t>* region_mask = nullptr);

// n / sum(1/m); 0 when any metric is 0; errors on an empty list.
double harmonic_mean(const std::vector<double>& metrics);

// ---------------------------------------------------------------------------
// Dataset harness
// ---------------------------------------------------------------------------

// Manifest line: image_a image_b gt_kind gt_path [split] [mask_a mask_b]
// gt_kind: homography | corrmap | identity ('-' for unused paths). '#' starts
// a comment.
struct PairRecord {
  std::string image_a, image_b;
  std::string gt_kind, gt_path;
  std::string split;  // e.g. illumination / viewpoint; empty = unlabeled
  std::string mask_a, mask_b;
};

std::vector<PairRecord> read_manifest(const std::string& path);

struct Features {
  std::string image_id;
  int height = 0, width = 0;
  PointSet keypoints;
  Mat<float> descriptors;  // dim x n unit columns
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual Features features_for(const std::string& image_path) = 0;
};

// Runs the network: center-crops to a cell multiple (with a warning),
// thresholded NMS extraction, interpolated unit descriptors.
class ModelFeatureProvider : public FeatureProvider {
 public:
  ModelFeatureProvider(Network<float> net, ExtractionConfig extraction);
  Features features_for(const std::string& image_path) override;

 private:
  Network<float> net_;
  ExtractionConfig extraction_;
};

// Reads "<stem>.kpts" interchange files from a directory; image files are
// consulted only for their dimensions.
class FileFeatureProvider : public FeatureProvider {
 public:
  explicit FileFeatureProvider(std::string dir);
  Features features_for(const std::string& image_path) override;

 private:
  std::string dir_;
};

struct PairMetrics {
  std::string image_a, image_b, split;
  bool ok = false;
  std::string error;
  // keyed by eps
  std::map<double, double> repeatability, precision, coverage, harmonic_all, harmonic_rp;
};

struct SplitSummary {
  long long pair_count = 0;
  std::map<double, double> repeatability, precision, coverage, harmonic_all, harmonic_rp;
};

struct EvalReport {
  EvalConfig config;
  std::vector<PairMetrics> pairs;
  std::vector<std::string> skipped;
  std::map<std::string, SplitSummary> splits;  // per split plus "all"
};

// Per-pair metrics aggregated by mean; unreadable pairs are skipped and
// listed. viz_dir, when set, receives side-by-side match plots.
EvalReport evaluate_dataset(FeatureProvider& provider, const std::vector<PairRecord>& pairs,
                            const EvalConfig& cfg, const std::string& viz_dir = "");

std::string report_to_text(const EvalReport& report);
std::string report_to_json_string(const EvalReport& report);

}  // namespace goodpoint
