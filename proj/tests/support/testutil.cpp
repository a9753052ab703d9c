#include "support/testutil.hpp"

#include <cmath>

#include "goodpoint/image_io.hpp"
#include "goodpoint/model.hpp"

namespace goodpoint::testutil {

Image synthetic_image(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  // A few random plane waves plus blobs gives texture at several scales.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 6; ++i)
    waves.push_back({rng.uniform(0.02, 0.35), rng.uniform(0.02, 0.35), rng.uniform(0.0, 6.28),
                     rng.uniform(0.1, 0.35)});
  struct Blob {
    double cx, cy, r, amp;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 12; ++i)
    blobs.push_back({rng.uniform(0.0, double(width)), rng.uniform(0.0, double(height)),
                     rng.uniform(3.0, 20.0), rng.uniform(-0.5, 0.5)});

  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = 0.5;
      for (const auto& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      for (const auto& b : blobs) {
        const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
        v += b.amp * std::exp(-d2 / (2.0 * b.r * b.r));
      }
      img.at(y, x) = float(std::clamp(0.5 + 0.35 * std::tanh(v - 0.5), 0.0, 1.0));
    }
  }
  return img;
}

Plane<double> random_plane(int height, int width, Rng& rng, double lo, double hi) {
  Plane<double> p(height, width);
  for (auto& v : p.v) v = rng.uniform(lo, hi);
  return p;
}

Plane<float> random_plane_f(int height, int width, Rng& rng, double lo, double hi) {
  Plane<float> p(height, width);
  for (auto& v : p.v) v = float(rng.uniform(lo, hi));
  return p;
}

PointSet random_points(int n, double max_x, double max_y, Rng& rng) {
  PointSet ps;
  for (int i = 0; i < n; ++i)
    ps.push_back({rng.uniform(0.0, max_x), rng.uniform(0.0, max_y)}, rng.uniform());
  return ps;
}

Mat<double> random_unit_descriptors(int dim, int n, Rng& rng) {
  Mat<double> d(dim, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < dim; ++i) d(i, j) = rng.normal();
    d.col(j).normalize();
  }
  return d;
}

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto base = std::filesystem::temp_directory_path() / "goodpoint_tests";
  path_ = (base / (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++)))
              .string();
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string TempDir::file(const std::string& name) const {
  return (std::filesystem::path(path_) / name).string();
}

std::vector<std::string> write_corpus(const std::string& dir, int n, int height, int width,
                                      std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.pgm", i);
    const std::string path = (std::filesystem::path(dir) / name).string();
    write_pgm(path, synthetic_image(height, width, seed + std::uint64_t(i)));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace goodpoint::testutil
