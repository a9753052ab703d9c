#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "goodpoint/eval.hpp"
#include "goodpoint/image_io.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace goodpoint;

namespace {

Homography translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography::from_matrix(m);
}

void to_array(const Homography& h, double m[3][3]) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = h.matrix()(r, c);
}

}  // namespace

TEST_CASE("repeatability") {
  const CorrespondenceGt identity = CorrespondenceGt::identity();

  SUBCASE("projected detections equal the references") {
    Rng rng(1);
    const PointSet k = testutil::random_points(30, 63, 63, rng);
    CHECK(repeatability(k, k, identity, 64, 64, 64, 64, 3.0) == doctest::Approx(1.0));
  }

  SUBCASE("empty counterpart set gives zero") {
    Rng rng(2);
    const PointSet k = testutil::random_points(10, 63, 63, rng);
    CHECK(repeatability(k, PointSet{}, identity, 64, 64, 64, 64, 3.0) == 0.0);
  }

  SUBCASE("zero in-bounds projections are flagged") {
    PointSet far;
    far.push_back({200, 200});
    bool flagged = false;
    CHECK(repeatability(far, far, CorrespondenceGt::from_homography(translation(500, 500)), 64, 64,
                        64, 64, 3.0, &flagged) == 0.0);
    CHECK(flagged);
  }

  SUBCASE("matches the brute-force pairwise oracle") {
    Rng rng(3);
    HomographyConfig cfg{4.0, 10.0, 0.05};
    for (int trial = 0; trial < 25; ++trial) {
      const Homography h = sample_homography(cfg, 64, 64, rng);
      const PointSet ka = testutil::random_points(20, 63, 63, rng);
      const PointSet kb = testutil::random_points(15, 63, 63, rng);
      double hm[3][3], hm_inv[3][3];
      to_array(h, hm);
      to_array(h.inverse(), hm_inv);
      const double expected =
          oracles::brute_repeatability(ka.pts, kb.pts, hm, hm_inv, 64, 64, 64, 64, 3.0);
      CHECK(repeatability(ka, kb, CorrespondenceGt::from_homography(h), 64, 64, 64, 64, 3.0) ==
            doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("monotone in the threshold") {
    Rng rng(4);
    const PointSet ka = testutil::random_points(25, 63, 63, rng);
    const PointSet kb = testutil::random_points(25, 63, 63, rng);
    double last = 0.0;
    for (double eps : {1.0, 2.0, 4.0, 8.0, 16.0}) {
      const double r = repeatability(ka, kb, identity, 64, 64, 64, 64, eps);
      CHECK(r >= last);
      last = r;
    }
  }
}

TEST_CASE("match_and_precision") {
  Rng rng(5);

  SUBCASE("perfect copies give precision 1") {
    const PointSet k = testutil::random_points(12, 63, 63, rng);
    const Mat<double> dd = testutil::random_unit_descriptors(16, 12, rng);
    const Mat<float> d = dd.cast<float>();
    const auto res = match_and_precision(k, d, k, d, CorrespondenceGt::identity(), 64, 64, 64, 64,
                                         3.0, 0.8);
    CHECK(res.precision == doctest::Approx(1.0));
    CHECK_FALSE(res.flagged);
  }

  SUBCASE("unreachable similarity threshold flags the result") {
    const PointSet k = testutil::random_points(8, 63, 63, rng);
    Mat<float> d = testutil::random_unit_descriptors(16, 8, rng).cast<float>();
    // Add noise so self-similarity stays below 1 after renormalizing.
    Mat<float> noisy = d;
    for (int i = 0; i < 8; ++i) {
      noisy.col(i) += 0.1f * Mat<float>::Random(16, 1);
      noisy.col(i).normalize();
    }
    const auto res = match_and_precision(k, d, k, noisy, CorrespondenceGt::identity(), 64, 64, 64,
                                         64, 3.0, 1.0 + 1e-9);
    CHECK(res.flagged);
    CHECK(res.precision == 0.0);
  }

  SUBCASE("planted wrong correspondences drive precision to the planted rate") {
    // 10 keypoints: descriptors match 1:1, but half of the counterpart
    // keypoints are displaced far away, so those matches are wrong.
    PointSet ka, kb;
    for (int i = 0; i < 10; ++i) {
      ka.push_back({double(5 + 6 * i), 10.0});
      kb.push_back({double(5 + 6 * i), i % 2 == 0 ? 10.0 : 40.0});
    }
    Mat<double> base = testutil::random_unit_descriptors(32, 10, rng);
    const Mat<float> d = base.cast<float>();
    const auto res = match_and_precision(ka, d, kb, d, CorrespondenceGt::identity(), 64, 64, 64,
                                         64, 3.0, 0.5);
    CHECK(res.precision == doctest::Approx(0.5));
    CHECK(res.correct_in_a.size() == 10);  // 5 from each direction
  }
}

TEST_CASE("coverage") {
  SUBCASE("no correct matches means zero coverage") {
    CHECK(coverage(PointSet{}, 100, 100, 25.0) == 0.0);
  }

  SUBCASE("single center match equals the lattice-count oracle") {
    PointSet pts;
    pts.push_back({50, 50});
    const double expected = oracles::brute_coverage(pts.pts, 100, 100, 25.0);
    CHECK(coverage(pts, 100, 100, 25.0) == doctest::Approx(expected).epsilon(1e-12));
    // And the oracle itself counts the closed disk.
    long long count = 0;
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x)
        if ((x - 50.0) * (x - 50.0) + (y - 50.0) * (y - 50.0) <= 625.0) ++count;
    CHECK(expected == doctest::Approx(double(count) / 10000.0));
  }

  SUBCASE("dense matches saturate to one") {
    PointSet pts;
    for (int y = 0; y < 64; y += 8)
      for (int x = 0; x < 64; x += 8) pts.push_back({double(x), double(y)});
    CHECK(coverage(pts, 64, 64, 25.0) == doctest::Approx(1.0));
  }

  SUBCASE("radius at least the diagonal with one match covers everything") {
    PointSet pts;
    pts.push_back({3, 60});
    CHECK(coverage(pts, 64, 64, 91.0) == doctest::Approx(1.0));
  }

  SUBCASE("monotone in the radius, matches oracle on random sets") {
    Rng rng(6);
    const PointSet pts = testutil::random_points(5, 47, 47, rng);
    double last = 0.0;
    for (double radius : {2.0, 5.0, 10.0, 20.0}) {
      const double c = coverage(pts, 48, 48, radius);
      CHECK(c == doctest::Approx(oracles::brute_coverage(pts.pts, 48, 48, radius)).epsilon(1e-12));
      CHECK(c >= last);
      last = c;
    }
  }

  SUBCASE("region mask restricts the denominator") {
    Plane<std::uint8_t> mask(10, 10, 0);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 10; ++x) mask.at(y, x) = 1;
    PointSet pts;
    pts.push_back({5, 2});
    const double full = coverage(pts, 10, 10, 100.0, &mask);
    CHECK(full == doctest::Approx(1.0));  // everything in-mask is covered
  }
}

TEST_CASE("harmonic_mean") {
  CHECK(harmonic_mean({0.5, 0.5}) == doctest::Approx(0.5));
  CHECK(harmonic_mean({1.0, 1.0, 1.0}) == doctest::Approx(1.0));
  CHECK(harmonic_mean({0.3, 0.0}) == 0.0);
  CHECK_THROWS_AS(harmonic_mean({}), Error);

  SUBCASE("two-metric case reduces to the F1 formula") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
      const double p = rng.uniform(0.05, 1.0), r = rng.uniform(0.05, 1.0);
      CHECK(harmonic_mean({p, r}) == doctest::Approx(2.0 * p * r / (p + r)).epsilon(1e-12));
    }
  }

  SUBCASE("reported AirSim fantasy-village combination") {
    CHECK(std::abs(harmonic_mean({0.86, 0.57, 0.57}) - 0.64) < 0.005);
  }

  SUBCASE("sandwiched between the minimum and the maximum") {
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> m{rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0),
                            rng.uniform(0.01, 1.0)};
      const double hm = harmonic_mean(m);
      CHECK(hm >= *std::min_element(m.begin(), m.end()) - 1e-12);
      CHECK(hm <= *std::max_element(m.begin(), m.end()) + 1e-12);
    }
  }
}

TEST_CASE("correspondence-map ground truth") {
  // A translation encoded as a dense map.
  const int h = 32, w = 32;
  CorrespondenceMapData map;
  map.x = Plane<float>(h, w);
  map.y = Plane<float>(h, w);
  map.valid = Plane<std::uint8_t>(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      map.x.at(y, x) = float(x + 4);
      map.y.at(y, x) = float(y - 2);
    }
  map.valid.at(5, 5) = 0;
  const CorrespondenceGt gt = CorrespondenceGt::from_map(std::move(map));

  const auto fwd = gt.map_a_to_b({10, 10});
  REQUIRE(fwd.has_value());
  CHECK(fwd->x == doctest::Approx(14.0));
  CHECK(fwd->y == doctest::Approx(8.0));
  CHECK_FALSE(gt.map_a_to_b({5, 5}).has_value());  // invalid entry
  CHECK_FALSE(gt.map_a_to_b({-3, 0}).has_value());

  // The fitted homography drives the reverse direction.
  const auto back = gt.map_b_to_a({14, 8});
  REQUIRE(back.has_value());
  CHECK(back->x == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(back->y == doctest::Approx(10.0).epsilon(1e-6));
}

namespace {

// Feature provider with planted detections: keypoints on a grid with
// orthogonal-ish descriptors, identical for every image.
class PlantedProvider : public FeatureProvider {
 public:
  Features features_for(const std::string& image_path) override {
    Features f;
    f.image_id = path_stem(image_path);
    f.height = 64;
    f.width = 64;
    Rng rng(42);  // same features for both images
    f.keypoints = testutil::random_points(20, 63, 63, rng);
    f.descriptors = testutil::random_unit_descriptors(32, 20, rng).cast<float>();
    return f;
  }
};

}  // namespace

TEST_CASE("evaluate_dataset on a synthetic manifest") {
  testutil::TempDir dir("evalds");
  write_pgm(dir.file("a.pgm"), testutil::synthetic_image(64, 64, 1));
  write_pgm(dir.file("b.pgm"), testutil::synthetic_image(64, 64, 1));
  {
    std::ofstream manifest(dir.file("pairs.txt"));
    manifest << "# self pair\n";
    manifest << dir.file("a.pgm") << " " << dir.file("b.pgm") << " identity - illumination\n";
    manifest << dir.file("a.pgm") << " missing.pgm gone.txt\n";  // malformed gt kind line below
  }
  // Rewrite with a valid but skippable record.
  {
    std::ofstream manifest(dir.file("pairs.txt"));
    manifest << dir.file("a.pgm") << " " << dir.file("b.pgm") << " identity - illumination\n";
    manifest << dir.file("a.pgm") << " missing.pgm homography " << dir.file("nope.txt") << "\n";
  }
  const auto records = read_manifest(dir.file("pairs.txt"));
  REQUIRE(records.size() == 2);
  CHECK(records[0].split == "illumination");

  PlantedProvider provider;
  EvalConfig cfg;
  const EvalReport report = evaluate_dataset(provider, records, cfg);
  REQUIRE(report.pairs.size() == 2);
  CHECK(report.pairs[0].ok);
  CHECK_FALSE(report.pairs[1].ok);
  CHECK(report.skipped.size() == 1);

  // Identity self-pair with identical planted features: perfect metrics.
  CHECK(report.pairs[0].repeatability.at(3.0) == doctest::Approx(1.0));
  CHECK(report.pairs[0].precision.at(3.0) == doctest::Approx(1.0));
  CHECK(report.pairs[0].harmonic_rp.at(3.0) == doctest::Approx(1.0));

  // Schema: both thresholds present, coverage and both harmonic means too.
  const auto& s = report.splits.at("illumination");
  for (double eps : {3.0, 5.0}) {
    CHECK(s.repeatability.count(eps) == 1);
    CHECK(s.precision.count(eps) == 1);
    CHECK(s.coverage.count(eps) == 1);
    CHECK(s.harmonic_all.count(eps) == 1);
    CHECK(s.harmonic_rp.count(eps) == 1);
  }
  CHECK(report.splits.count("all") == 1);

  const std::string json = report_to_json_string(report);
  CHECK(json.find("\"repeatability\"") != std::string::npos);
  CHECK(json.find("\"coverage\"") != std::string::npos);
  CHECK(json.find("\"harmonic_mean_all\"") != std::string::npos);
  CHECK(json.find("\"harmonic_mean_rep_prec\"") != std::string::npos);
  const std::string text = report_to_text(report);
  CHECK(text.find("repeatability") != std::string::npos);
  CHECK(text.find("skipped") != std::string::npos);
}

TEST_CASE("metric symmetry under pair swap") {
  Rng rng(11);
  HomographyConfig hcfg{3.0, 6.0, 0.03};
  const Homography h = sample_homography(hcfg, 64, 64, rng);
  const PointSet ka = testutil::random_points(18, 63, 63, rng);
  const PointSet kb = testutil::random_points(22, 63, 63, rng);
  const Mat<float> da = testutil::random_unit_descriptors(16, 18, rng).cast<float>();
  const Mat<float> db = testutil::random_unit_descriptors(16, 22, rng).cast<float>();
  const CorrespondenceGt gt = CorrespondenceGt::from_homography(h);
  const CorrespondenceGt gt_inv = gt.inverted();

  const double rep_ab = repeatability(ka, kb, gt, 64, 64, 64, 64, 4.0);
  const double rep_ba = repeatability(kb, ka, gt_inv, 64, 64, 64, 64, 4.0);
  CHECK(rep_ab == doctest::Approx(rep_ba).epsilon(1e-12));

  const double p_ab =
      match_and_precision(ka, da, kb, db, gt, 64, 64, 64, 64, 4.0, 0.0).precision;
  const double p_ba =
      match_and_precision(kb, db, ka, da, gt_inv, 64, 64, 64, 64, 4.0, 0.0).precision;
  CHECK(p_ab == doctest::Approx(p_ba).epsilon(1e-12));
}

TEST_CASE("model-backed feature provider center-crops awkward sizes") {
  testutil::TempDir dir("provider");
  write_pgm(dir.file("odd.pgm"), testutil::synthetic_image(67, 93, 5));
  ModelFeatureProvider provider(make_network<float>(NetworkShape::standard(), 1),
                                ExtractionConfig{});
  const Features f = provider.features_for(dir.file("odd.pgm"));
  CHECK(f.height == 64);
  CHECK(f.width == 88);
  CHECK(f.descriptors.cols() == Eigen::Index(f.keypoints.size()));
  for (Eigen::Index i = 0; i < f.descriptors.cols(); ++i)
    CHECK(std::abs(f.descriptors.col(i).norm() - 1.0f) < 1e-5f);
}
