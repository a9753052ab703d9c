#pragma once

#include "goodpoint/common.hpp"

namespace goodpoint {

struct ExtractionConfig {
  int train_window_src = 32;
  int train_window_warp = 16;
  double inference_threshold = 0.021;
  double nms_radius = 4.0;
  bool apply_nms = true;
};

// One point per window x window tile (edge tiles may be smaller): the tile's
// maximum, ties broken by smallest row then column. Scores attached.
template <class T>
PointSet extract_windowed_max(const Plane<T>& hm, int window);

// Threshold at inference_threshold, then greedy non-maximum suppression by
// descending score: a candidate within nms_radius of an accepted point is
// dropped. With apply_nms off, returns all thresholded pixels.
template <class T>
PointSet extract_inference(const Plane<T>& hm, const ExtractionConfig& cfg);

}  // namespace goodpoint
