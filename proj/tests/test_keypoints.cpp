#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "goodpoint/keypoints.hpp"
#include "goodpoint/rng.hpp"
#include "support/testutil.hpp"

using namespace goodpoint;

TEST_CASE("extract_windowed_max") {
  SUBCASE("256x256 heatmap with window 32 yields exactly 64 points") {
    Rng rng(1);
    const auto hm = testutil::random_plane(256, 256, rng);
    CHECK(extract_windowed_max(hm, 32).size() == 64);
  }

  SUBCASE("one synthetic peak per tile is found exactly") {
    Plane<double> hm(64, 64, 0.01);
    Rng rng(2);
    std::vector<Vec2> peaks;
    for (int ty = 0; ty < 4; ++ty)
      for (int tx = 0; tx < 4; ++tx) {
        const int px = tx * 16 + int(rng.uniform_int(16));
        const int py = ty * 16 + int(rng.uniform_int(16));
        hm.at(py, px) = 0.9;
        peaks.push_back({double(px), double(py)});
      }
    const PointSet out = extract_windowed_max(hm, 16);
    REQUIRE(out.size() == peaks.size());
    for (std::size_t i = 0; i < peaks.size(); ++i) {
      CHECK(out.pts[i].x == peaks[i].x);
      CHECK(out.pts[i].y == peaks[i].y);
      CHECK(out.scores[i] == doctest::Approx(0.9));
    }
  }

  SUBCASE("matches a brute-force per-tile scan, partial edge tiles included") {
    Rng rng(3);
    const auto hm = testutil::random_plane(50, 70, rng);  // not divisible by the window
    const int window = 16;
    const PointSet out = extract_windowed_max(hm, window);
    const int tiles_y = (50 + window - 1) / window;
    const int tiles_x = (70 + window - 1) / window;
    REQUIRE((int)out.size() == tiles_y * tiles_x);
    std::size_t i = 0;
    for (int ty = 0; ty < tiles_y; ++ty) {
      for (int tx = 0; tx < tiles_x; ++tx, ++i) {
        double best = -1.0;
        int bx = -1, by = -1;
        for (int y = ty * window; y < std::min(50, (ty + 1) * window); ++y)
          for (int x = tx * window; x < std::min(70, (tx + 1) * window); ++x)
            if (hm.at(y, x) > best) {
              best = hm.at(y, x);
              by = y;
              bx = x;
            }
        CHECK(out.pts[i].x == bx);
        CHECK(out.pts[i].y == by);
      }
    }
  }

  SUBCASE("ties break to the smallest row then column") {
    Plane<double> hm(8, 8, 0.5);
    const PointSet out = extract_windowed_max(hm, 8);
    REQUIRE(out.size() == 1);
    CHECK(out.pts[0].x == 0);
    CHECK(out.pts[0].y == 0);
  }
}

TEST_CASE("extract_inference") {
  ExtractionConfig cfg;
  cfg.inference_threshold = 0.021;
  cfg.nms_radius = 4.0;

  SUBCASE("uniform 1/64 heatmap yields nothing above 0.021") {
    Plane<double> hm(32, 32, 1.0 / 64.0);
    CHECK(extract_inference(hm, cfg).empty());
  }

  SUBCASE("a single sharp peak is returned once") {
    Plane<double> hm(32, 32, 0.001);
    hm.at(17, 9) = 0.9;
    const PointSet out = extract_inference(hm, cfg);
    REQUIRE(out.size() == 1);
    CHECK(out.pts[0].x == 9);
    CHECK(out.pts[0].y == 17);
    CHECK(out.scores[0] == doctest::Approx(0.9));
  }

  SUBCASE("of two peaks 3 px apart the stronger survives") {
    Plane<double> hm(32, 32, 0.001);
    hm.at(10, 10) = 0.5;
    hm.at(10, 13) = 0.8;
    const PointSet out = extract_inference(hm, cfg);
    REQUIRE(out.size() == 1);
    CHECK(out.pts[0].x == 13);
  }

  SUBCASE("no two survivors closer than the radius") {
    Rng rng(7);
    const auto hm = testutil::random_plane(64, 64, rng);
    const PointSet out = extract_inference(hm, cfg);
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j) {
        const double dx = out.pts[i].x - out.pts[j].x;
        const double dy = out.pts[i].y - out.pts[j].y;
        CHECK(dx * dx + dy * dy >= cfg.nms_radius * cfg.nms_radius);
      }
  }

  SUBCASE("greedy order matches a hand-rolled oracle") {
    Rng rng(8);
    const auto hm = testutil::random_plane(48, 48, rng);
    const PointSet out = extract_inference(hm, cfg);

    // Oracle: sort all candidates, accept greedily.
    struct C {
      double s;
      int x, y;
    };
    std::vector<C> cands;
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        if (hm.at(y, x) >= cfg.inference_threshold) cands.push_back({hm.at(y, x), x, y});
    std::sort(cands.begin(), cands.end(), [](const C& a, const C& b) {
      if (a.s != b.s) return a.s > b.s;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
    std::vector<C> accepted;
    for (const C& c : cands) {
      bool ok = true;
      for (const C& a : accepted) {
        const double dx = c.x - a.x, dy = c.y - a.y;
        if (dx * dx + dy * dy < cfg.nms_radius * cfg.nms_radius) {
          ok = false;
          break;
        }
      }
      if (ok) accepted.push_back(c);
    }
    REQUIRE(out.size() == accepted.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out.pts[i].x == accepted[i].x);
      CHECK(out.pts[i].y == accepted[i].y);
    }
  }

  SUBCASE("determinism") {
    Rng rng(9);
    const auto hm = testutil::random_plane(32, 32, rng);
    const PointSet a = extract_inference(hm, cfg);
    const PointSet b = extract_inference(hm, cfg);
    CHECK(a.pts.size() == b.pts.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.pts[i].x == b.pts[i].x);
      CHECK(a.pts[i].y == b.pts[i].y);
    }
  }
}
