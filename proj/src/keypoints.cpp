#include "goodpoint/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace goodpoint {

template <class T>
PointSet extract_windowed_max(const Plane<T>& hm, int window) {
  if (window < 1) raise_runtime("extract_windowed_max: window must be >= 1");
  PointSet out;
  for (int ty = 0; ty < hm.height; ty += window) {
    for (int tx = 0; tx < hm.width; tx += window) {
      const int y_end = std::min(ty + window, hm.height);
      const int x_end = std::min(tx + window, hm.width);
      int best_y = ty, best_x = tx;
      T best = hm.at(ty, tx);
      for (int y = ty; y < y_end; ++y) {
        for (int x = tx; x < x_end; ++x) {
          if (hm.at(y, x) > best) {  // strict: first max wins (smallest row, then column)
            best = hm.at(y, x);
            best_y = y;
            best_x = x;
          }
        }
      }
      out.push_back({double(best_x), double(best_y)}, double(best));
    }
  }
  return out;
}

template <class T>
PointSet extract_inference(const Plane<T>& hm, const ExtractionConfig& cfg) {
  struct Candidate {
    int x, y;
    double score;
  };
  std::vector<Candidate> cands;
  for (int y = 0; y < hm.height; ++y)
    for (int x = 0; x < hm.width; ++x)
      if (double(hm.at(y, x)) >= cfg.inference_threshold)
        cands.push_back({x, y, double(hm.at(y, x))});
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });

  PointSet out;
  if (!cfg.apply_nms) {
    for (const auto& c : cands) out.push_back({double(c.x), double(c.y)}, c.score);
    return out;
  }
  const double r2 = cfg.nms_radius * cfg.nms_radius;
  std::vector<Candidate> accepted;
  for (const auto& c : cands) {
    bool suppressed = false;
    for (const auto& a : accepted) {
      const double dx = c.x - a.x, dy = c.y - a.y;
      if (dx * dx + dy * dy < r2) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      accepted.push_back(c);
      out.push_back({double(c.x), double(c.y)}, c.score);
    }
  }
  return out;
}

template PointSet extract_windowed_max<float>(const Plane<float>&, int);
template PointSet extract_windowed_max<double>(const Plane<double>&, int);
template PointSet extract_inference<float>(const Plane<float>&, const ExtractionConfig&);
template PointSet extract_inference<double>(const Plane<double>&, const ExtractionConfig&);

}  // namespace goodpoint
