#pragma once

#include <string>
#include <vector>

#include "goodpoint/common.hpp"
#include "goodpoint/geometry.hpp"
#include "goodpoint/model.hpp"

namespace goodpoint {

// Keypoint interchange file: header line "<count> <image_id>", then one line
// per point: "x y score" plus the descriptor floats when present.
struct KeypointFile {
  std::string image_id;
  PointSet points;
  Mat<float> descriptors;  // dim x count; 0 x 0 when absent
};

void write_keypoint_file(const std::string& path, const KeypointFile& kf);
KeypointFile read_keypoint_file(const std::string& path);

// Match interchange file: lines of "i j similarity dist_geom accepted_flag";
// dist_geom is nan when no homography was supplied.
struct MatchFileRow {
  int i = 0;
  int j = 0;
  double similarity = 0.0;
  double dist_geom = 0.0;
  int accepted = 0;
};

void write_match_file(const std::string& path, const std::vector<MatchFileRow>& rows);
std::vector<MatchFileRow> read_match_file(const std::string& path);

// Homography text format: 9 whitespace-separated decimals, row-major, one
// homography per line. Readers accept any whitespace layout (the common 3x3
// ground-truth files parse as one homography).
void write_homography_file(const std::string& path, const std::vector<Homography>& hs);
std::vector<Homography> read_homography_file(const std::string& path);

// Dense correspondence map: per-pixel (x, y) targets with validity bits.
// Binary little-endian: magic "GPCM", u32 version, u32 height, u32 width,
// then f32 x[h*w], f32 y[h*w], u8 valid[h*w], row-major.
struct CorrespondenceMapData {
  Plane<float> x;
  Plane<float> y;
  Plane<std::uint8_t> valid;
};

void write_correspondence_map(const std::string& path, const CorrespondenceMapData& map);
CorrespondenceMapData read_correspondence_map(const std::string& path);

std::string path_stem(const std::string& path);

}  // namespace goodpoint
