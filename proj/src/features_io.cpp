#include "goodpoint/features_io.hpp"

#include <cinttypes>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace goodpoint {

void write_keypoint_file(const std::string& path, const KeypointFile& kf) {
  std::ofstream out(path);
  if (!out) raise_runtime("cannot write keypoint file: " + path);
  out << kf.points.size() << " " << kf.image_id << "\n";
  const bool has_desc = kf.descriptors.cols() == Eigen::Index(kf.points.size());
  char buf[64];
  for (std::size_t i = 0; i < kf.points.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", kf.points.pts[i].x, kf.points.pts[i].y,
                  kf.points.scores.size() == kf.points.size() ? kf.points.scores[i] : 0.0);
    out << buf;
    if (has_desc) {
      for (Eigen::Index d = 0; d < kf.descriptors.rows(); ++d) {
        std::snprintf(buf, sizeof buf, " %.9g", double(kf.descriptors(d, Eigen::Index(i))));
        out << buf;
      }
    }
    out << "\n";
  }
  if (!out) raise_runtime("failed writing keypoint file: " + path);
}

KeypointFile read_keypoint_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise_runtime("cannot open keypoint file: " + path);
  KeypointFile kf;
  std::string header;
  if (!std::getline(in, header)) raise_runtime("empty keypoint file: " + path);
  std::istringstream hs(header);
  std::size_t count = 0;
  if (!(hs >> count >> kf.image_id)) raise_runtime("malformed keypoint header: " + path);

  std::vector<std::vector<float>> desc_rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    double x, y, score;
    if (!(ls >> x >> y >> score)) raise_runtime("malformed keypoint line in " + path);
    kf.points.push_back({x, y}, score);
    std::vector<float> d;
    double v;
    while (ls >> v) d.push_back(float(v));
    desc_rows.push_back(std::move(d));
  }
  if (kf.points.size() != count)
    raise_runtime("keypoint count mismatch in " + path + ": header says " + std::to_string(count) +
                  ", found " + std::to_string(kf.points.size()));
  if (!desc_rows.empty() && !desc_rows.front().empty()) {
    const std::size_t dim = desc_rows.front().size();
    kf.descriptors.resize(Eigen::Index(dim), Eigen::Index(desc_rows.size()));
    for (std::size_t i = 0; i < desc_rows.size(); ++i) {
      if (desc_rows[i].size() != dim)
        raise_runtime("inconsistent descriptor length in " + path);
      for (std::size_t d = 0; d < dim; ++d)
        kf.descriptors(Eigen::Index(d), Eigen::Index(i)) = desc_rows[i][d];
    }
  }
  return kf;
}

void write_match_file(const std::string& path, const std::vector<MatchFileRow>& rows) {
  std::ofstream out(path);
  if (!out) raise_runtime("cannot write match file: " + path);
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d %d %.9g %.9g %d\n", r.i, r.j, r.similarity, r.dist_geom,
                  r.accepted);
    out << buf;
  }
  if (!out) raise_runtime("failed writing match file: " + path);
}

std::vector<MatchFileRow> read_match_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise_runtime("cannot open match file: " + path);
  std::vector<MatchFileRow> rows;
  std::string si, sj, ssim, sdist, sacc;
  // strtod handles the textual "nan" that iostream extraction rejects.
  while (in >> si >> sj >> ssim >> sdist >> sacc) {
    MatchFileRow r;
    r.i = std::atoi(si.c_str());
    r.j = std::atoi(sj.c_str());
    r.similarity = std::strtod(ssim.c_str(), nullptr);
    r.dist_geom = std::strtod(sdist.c_str(), nullptr);
    r.accepted = std::atoi(sacc.c_str());
    rows.push_back(r);
  }
  return rows;
}

void write_homography_file(const std::string& path, const std::vector<Homography>& hs) {
  std::ofstream out(path);
  if (!out) raise_runtime("cannot write homography file: " + path);
  char buf[48];
  for (const auto& h : hs) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", h.matrix()(r, c));
        out << (r == 0 && c == 0 ? "" : " ") << buf;
      }
    }
    out << "\n";
  }
  if (!out) raise_runtime("failed writing homography file: " + path);
}

std::vector<Homography> read_homography_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise_runtime("cannot open homography file: " + path);
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  if (values.empty() || values.size() % 9 != 0)
    raise_runtime("homography file must hold a multiple of 9 decimals: " + path);
  std::vector<Homography> hs;
  for (std::size_t k = 0; k < values.size(); k += 9) {
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = values[k + std::size_t(3 * r + c)];
    hs.push_back(Homography::from_matrix(m));
  }
  return hs;
}

void write_correspondence_map(const std::string& path, const CorrespondenceMapData& map) {
  if (map.x.height != map.y.height || map.x.height != map.valid.height ||
      map.x.width != map.y.width || map.x.width != map.valid.width)
    raise_runtime("correspondence map plane shape mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) raise_runtime("cannot write correspondence map: " + path);
  out.write("GPCM", 4);
  const std::uint32_t version = 1, h = std::uint32_t(map.x.height), w = std::uint32_t(map.x.width);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(map.x.v.data()),
            std::streamsize(map.x.v.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(map.y.v.data()),
            std::streamsize(map.y.v.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(map.valid.v.data()), std::streamsize(map.valid.v.size()));
  if (!out) raise_runtime("failed writing correspondence map: " + path);
}

CorrespondenceMapData read_correspondence_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise_runtime("cannot open correspondence map: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (std::memcmp(magic, "GPCM", 4) != 0) raise_runtime("not a correspondence map: " + path);
  std::uint32_t version = 0, h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (version > 1) raise_runtime("correspondence map version too new: " + path);
  if (h == 0 || w == 0 || std::uint64_t(h) * w > (1ull << 30))
    raise_runtime("bad correspondence map dimensions: " + path);
  CorrespondenceMapData map;
  map.x = Plane<float>(int(h), int(w));
  map.y = Plane<float>(int(h), int(w));
  map.valid = Plane<std::uint8_t>(int(h), int(w));
  in.read(reinterpret_cast<char*>(map.x.v.data()), std::streamsize(map.x.v.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(map.y.v.data()), std::streamsize(map.y.v.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(map.valid.v.data()), std::streamsize(map.valid.v.size()));
  if (!in) raise_runtime("truncated correspondence map: " + path);
  return map;
}

std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

}  // namespace goodpoint
