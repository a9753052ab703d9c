// Acceptance criteria 1-4 and 6-8: one PASS/FAIL line per criterion.
// Criterion 5 (the training smoke run) lives in acceptance_smoke.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "goodpoint/config.hpp"
#include "goodpoint/eval.hpp"
#include "goodpoint/image_io.hpp"
#include "goodpoint/matching.hpp"
#include "goodpoint/train.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace goodpoint;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& what, bool pass, const std::string& detail = "") {
  std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  if (!pass) ++g_failures;
}

void to_array(const Homography& h, double m[3][3]) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = h.matrix()(r, c);
}

std::vector<std::vector<double>> to_rows(const Mat<double>& m) {
  std::vector<std::vector<double>> rows;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    std::vector<double> r(std::size_t(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) r[std::size_t(i)] = m(i, j);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Criterion 1: oracle equivalence on randomized small instances.
// ---------------------------------------------------------------------------

bool oracle_matching(Rng& rng) {
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + int(rng.uniform_int(20));
    const int m = 1 + int(rng.uniform_int(20));
    const PointSet a = testutil::random_points(n, 63, 63, rng);
    const PointSet b = testutil::random_points(m, 63, 63, rng);
    const GeometricMatch gm = match_geometric(a, b);
    std::vector<double> dist;
    std::vector<int> idx;
    oracles::brute_match_geometric(a.pts, b.pts, dist, idx);
    if (gm.idx != idx) return false;
    for (std::size_t i = 0; i < dist.size(); ++i)
      if (std::abs(gm.dist[i] - dist[i]) > 1e-10) return false;

    const Mat<double> da = testutil::random_unit_descriptors(16, n, rng);
    const Mat<double> db = testutil::random_unit_descriptors(16, m, rng);
    if (match_descriptors(da, db).idx != oracles::brute_match_descriptors(to_rows(da), to_rows(db)))
      return false;
  }
  return true;
}

bool oracle_targets(Rng& rng) {
  HomographyConfig cfg{2.0, 5.0, 0.04};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + int(rng.uniform_int(19));
    const Homography h = sample_homography(cfg, 64, 64, rng);
    const PointSet k = testutil::random_points(n, 63, 63, rng);
    const PointSet projected = project_points(k, h);
    const auto [in_bounds, kept] = filter_in_bounds(projected, 64, 64);
    if (kept.empty()) continue;
    PointSet k_h;
    Rng jitter(rng.next_u64());
    for (const Vec2& p : in_bounds.pts)
      k_h.push_back({std::clamp(p.x + jitter.uniform(-3.0, 3.0), 0.0, 63.0),
                     std::clamp(p.y + jitter.uniform(-3.0, 3.0), 0.0, 63.0)});
    const Mat<double> d_proj = testutil::random_unit_descriptors(16, int(kept.size()), rng);
    Mat<double> d_h(16, Eigen::Index(kept.size()));
    for (Eigen::Index i = 0; i < d_h.cols(); ++i)
      d_h.col(i) = (d_proj.col(i) + 0.1 * Mat<double>::Random(16, 1)).normalized();

    const auto est = estimate_targets(k, k_h, d_proj, d_h, h, 4.0, 64, 64, 64, 64);
    double hm[3][3], hm_inv[3][3];
    to_array(h, hm);
    to_array(h.inverse(), hm_inv);
    const auto brute = oracles::brute_targets(k.pts, k_h.pts, to_rows(d_proj), to_rows(d_h), hm,
                                              hm_inv, 4.0, 64, 64, 64, 64);
    if (est.targets.source_indices != brute.accepted) return false;
    for (std::size_t i = 0; i < brute.accepted.size(); ++i) {
      if (std::abs(est.targets.k_prime.pts[i].x - brute.k_prime[i].x) > 1e-10) return false;
      if (std::abs(est.targets.k_prime.pts[i].y - brute.k_prime[i].y) > 1e-10) return false;
      if (std::abs(est.targets.k_prime_h.pts[i].x - brute.k_prime_h[i].x) > 1e-10) return false;
      if (std::abs(est.targets.k_prime_h.pts[i].y - brute.k_prime_h[i].y) > 1e-10) return false;
    }
  }
  return true;
}

bool oracle_bilinear(Rng& rng) {
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + int(rng.uniform_int(63));
    const int w = 2 + int(rng.uniform_int(63));
    const Plane<double> grid = testutil::random_plane(h, w, rng);
    for (int probe = 0; probe < 20; ++probe) {
      const double x = rng.uniform(0.0, double(w - 1));
      const double y = rng.uniform(0.0, double(h - 1));
      if (std::abs(bilinear_sample(grid, x, y) - oracles::bilinear(grid.v, h, w, x, y)) > 1e-10)
        return false;
    }
  }
  return true;
}

bool oracle_masks(Rng& rng) {
  HomographyConfig cfg{4.0, 12.0, 0.06};
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 8 + int(rng.uniform_int(57));
    const int w = 8 + int(rng.uniform_int(57));
    const Homography hom = sample_homography(cfg, h, w, rng);
    const ValidityMask mask = valid_mask(h, w, hom);
    double arr[3][3];
    to_array(hom, arr);
    if (mask.data.v != oracles::valid_mask(h, w, arr)) return false;
  }
  return true;
}

// Independent precision reference: naive cosine argmax scan + projection check.
double brute_precision(const PointSet& ka, const Mat<float>& da, const PointSet& kb,
                       const Mat<float>& db, const Homography& h, double eps, double theta) {
  auto one_way = [&](const PointSet& kf, const Mat<float>& df, const PointSet& kt,
                     const Mat<float>& dt, const Homography& gt) {
    long long total = 0, correct = 0;
    for (std::size_t i = 0; i < kf.size(); ++i) {
      int best_j = -1;
      double best = -2.0;
      for (std::size_t j = 0; j < kt.size(); ++j) {
        double dot = 0.0;
        for (Eigen::Index d = 0; d < df.rows(); ++d)
          dot += double(df(d, Eigen::Index(i))) * double(dt(d, Eigen::Index(j)));
        if (dot > best) {
          best = dot;
          best_j = int(j);
        }
      }
      if (best < theta) continue;
      ++total;
      double m[3][3];
      to_array(gt, m);
      const Vec2 q = oracles::project_point(m, kf.pts[i]);
      const double dx = q.x - kt.pts[std::size_t(best_j)].x;
      const double dy = q.y - kt.pts[std::size_t(best_j)].y;
      if (std::sqrt(dx * dx + dy * dy) <= eps) ++correct;
    }
    return std::pair<long long, long long>{correct, total};
  };
  const auto [cab, tab] = one_way(ka, da, kb, db, h);
  const auto [cba, tba] = one_way(kb, db, ka, da, h.inverse());
  if (tab + tba == 0) return 0.0;
  const double pab = tab > 0 ? double(cab) / double(tab) : 0.0;
  const double pba = tba > 0 ? double(cba) / double(tba) : 0.0;
  return 0.5 * (pab + pba);
}

bool oracle_metrics(Rng& rng) {
  HomographyConfig cfg{3.0, 8.0, 0.05};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + int(rng.uniform_int(19));
    const int m = 2 + int(rng.uniform_int(19));
    const Homography h = sample_homography(cfg, 64, 64, rng);
    const PointSet ka = testutil::random_points(n, 63, 63, rng);
    const PointSet kb = testutil::random_points(m, 63, 63, rng);
    const double eps = rng.uniform(1.0, 6.0);

    double hm[3][3], hm_inv[3][3];
    to_array(h, hm);
    to_array(h.inverse(), hm_inv);
    const CorrespondenceGt gt = CorrespondenceGt::from_homography(h);
    const double rep = repeatability(ka, kb, gt, 64, 64, 64, 64, eps);
    const double rep_oracle =
        oracles::brute_repeatability(ka.pts, kb.pts, hm, hm_inv, 64, 64, 64, 64, eps);
    if (std::abs(rep - rep_oracle) > 1e-10) return false;

    const Mat<float> da = testutil::random_unit_descriptors(8, n, rng).cast<float>();
    const Mat<float> db = testutil::random_unit_descriptors(8, m, rng).cast<float>();
    const double prec =
        match_and_precision(ka, da, kb, db, gt, 64, 64, 64, 64, eps, 0.2).precision;
    if (std::abs(prec - brute_precision(ka, da, kb, db, h, eps, 0.2)) > 1e-10) return false;

    const PointSet pts = testutil::random_points(int(rng.uniform_int(20)), 63, 63, rng);
    const double radius = rng.uniform(2.0, 30.0);
    if (std::abs(coverage(pts, 64, 64, radius) -
                 oracles::brute_coverage(pts.pts, 64, 64, radius)) > 1e-10)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 2: per-term loss gradients against central finite differences on
// the reduced double-precision network.
// ---------------------------------------------------------------------------

enum class Term { keypoints, heatmaps, descriptors };

struct GradientHarness {
  Network<double> net;
  Plane<double> img, warped;
  Homography h;
  double lambda_h = 2000.0;
  // Frozen index sets: targets, matches, shuffles, keypoint positions.
  PointSet k_kept, k_h;
  TargetSet targets;
  GeometricMatch gm;
  DescriptorMatch dm;
  std::vector<std::vector<int>> shuffles;

  explicit GradientHarness(std::uint64_t seed) {
    Rng rng(seed);
    net = make_network<double>(NetworkShape::reduced(), seed);
    Image base = testutil::synthetic_image(16, 16, seed + 1);
    img = Plane<double>(16, 16);
    for (std::size_t i = 0; i < base.size(); ++i) img.v[i] = base.v[i];
    HomographyConfig cfg{1.5, 3.0, 0.03};
    h = sample_homography(cfg, 16, 16, rng);
    warped = warp_plane(img, h);

    // One forward pass fixes every discrete choice.
    const auto out_a = forward(net, img);
    const auto out_b = forward(net, warped);
    const auto p = heatmap_from_logits(out_a.logits, out_a.cells_h, out_a.cells_w);
    const auto ph = heatmap_from_logits(out_b.logits, out_b.cells_h, out_b.cells_w);
    const PointSet k = extract_windowed_max(p, 8);
    k_h = extract_windowed_max(ph, 8);
    auto [k_proj, kept] = filter_in_bounds(project_points(k, h), 16, 16);
    for (int idx : kept) k_kept.push_back(k.pts[std::size_t(idx)]);
    const auto d_proj =
        interpolate_descriptors(out_a.descriptors, out_a.cells_h, out_a.cells_w, k_kept);
    const auto d_h = interpolate_descriptors(out_b.descriptors, out_b.cells_h, out_b.cells_w, k_h);
    const auto est = estimate_targets(k, k_h, d_proj.unit, d_h.unit, h, 6.0, 16, 16, 16, 16);
    targets = est.targets;
    gm = est.geometric;
    dm = est.descriptor;
    Rng srng(seed + 7);
    for (int r = 0; r < 2; ++r)
      shuffles.push_back(derangement_shuffle(gm.idx, int(k_h.size()), srng));
  }

  double loss(Term term) const {
    const auto out_a = forward(net, img);
    const auto out_b = forward(net, warped);
    if (term == Term::keypoints || term == Term::heatmaps) {
      const auto p = heatmap_from_logits(out_a.logits, out_a.cells_h, out_a.cells_w);
      const auto ph = heatmap_from_logits(out_b.logits, out_b.cells_h, out_b.cells_w);
      if (term == Term::keypoints) return keypoint_loss(p, ph, targets);
      return heatmap_loss(p, ph, h, lambda_h);
    }
    const auto d_proj =
        interpolate_descriptors(out_a.descriptors, out_a.cells_h, out_a.cells_w, k_kept);
    const auto d_h = interpolate_descriptors(out_b.descriptors, out_b.cells_h, out_b.cells_w, k_h);
    Rng unused(0);
    const auto parts = descriptor_loss(d_proj.unit, d_h.unit, gm, dm, unused, 2, 7.0, &shuffles);
    return parts.gt + parts.wrong + parts.random;
  }

  Network<double> analytic(Term term) const {
    ForwardCache<double> ca, cb;
    const auto out_a = forward(net, img, &ca);
    const auto out_b = forward(net, warped, &cb);
    Network<double> grads = zeros_like(net);
    Mat<double> dlog_a = Mat<double>::Zero(out_a.logits.rows(), out_a.logits.cols());
    Mat<double> dlog_b = Mat<double>::Zero(out_b.logits.rows(), out_b.logits.cols());
    Mat<double> dfield_a = Mat<double>::Zero(out_a.descriptors.rows(), out_a.descriptors.cols());
    Mat<double> dfield_b = Mat<double>::Zero(out_b.descriptors.rows(), out_b.descriptors.cols());

    if (term == Term::keypoints || term == Term::heatmaps) {
      const auto p = heatmap_from_logits(out_a.logits, out_a.cells_h, out_a.cells_w);
      const auto ph = heatmap_from_logits(out_b.logits, out_b.cells_h, out_b.cells_w);
      Plane<double> dp(p.height, p.width, 0.0), dph(ph.height, ph.width, 0.0);
      if (term == Term::keypoints) {
        keypoint_loss(p, ph, targets, nullptr, &dp, &dph, 1.0);
      } else {
        heatmap_loss(p, ph, h, lambda_h, BlurConfig{}, nullptr, &dp, &dph, 1.0);
      }
      dlog_a = heatmap_grad_to_logits(p, dp);
      dlog_b = heatmap_grad_to_logits(ph, dph);
    } else {
      const auto d_proj =
          interpolate_descriptors(out_a.descriptors, out_a.cells_h, out_a.cells_w, k_kept);
      const auto d_h =
          interpolate_descriptors(out_b.descriptors, out_b.cells_h, out_b.cells_w, k_h);
      Mat<double> ddp = Mat<double>::Zero(d_proj.unit.rows(), d_proj.unit.cols());
      Mat<double> ddh = Mat<double>::Zero(d_h.unit.rows(), d_h.unit.cols());
      Rng unused(0);
      descriptor_loss(d_proj.unit, d_h.unit, gm, dm, unused, 2, 7.0, &shuffles, &ddp, &ddh, 1.0);
      interpolate_descriptors_backward(d_proj, ddp, dfield_a);
      interpolate_descriptors_backward(d_h, ddh, dfield_b);
    }
    backward(net, ca, dlog_a, dfield_a, grads);
    backward(net, cb, dlog_b, dfield_b, grads);
    return grads;
  }
};

bool gradient_term(GradientHarness& harness, Term term, const char* name) {
  Network<double> grads = harness.analytic(term);
  auto params = layer_refs(harness.net);
  auto gradrefs = layer_refs(grads);
  Rng pick(0x9d5 + int(term));
  int agree = 0;
  const int samples = 200;
  const double step = 1e-5;
  for (int s = 0; s < samples; ++s) {
    const std::size_t li = std::size_t(pick.uniform_int(params.size()));
    auto& layer = *params[li].second;
    const bool use_weight = pick.coin(0.85);
    const Eigen::Index count = use_weight ? layer.weight.size() : layer.bias.size();
    const Eigen::Index idx = Eigen::Index(pick.uniform_int(std::uint64_t(count)));
    double* slot = use_weight ? layer.weight.data() + idx : layer.bias.data() + idx;
    const double saved = *slot;
    *slot = saved + step;
    const double hi = harness.loss(term);
    *slot = saved - step;
    const double lo = harness.loss(term);
    *slot = saved;
    const double fd = (hi - lo) / (2 * step);
    auto& gl = *gradrefs[li].second;
    const double an = use_weight ? gl.weight.data()[idx] : gl.bias.data()[idx];
    const double rel = std::abs(an - fd) / std::max({1e-8, std::abs(an), std::abs(fd)});
    if (rel < 1e-3) ++agree;
  }
  const bool pass = agree >= int(0.95 * samples);
  std::printf("    %s: %d/%d parameters within 1e-3\n", name, agree, samples);
  return pass;
}

// ---------------------------------------------------------------------------
// Criteria 3/4 helpers
// ---------------------------------------------------------------------------

bool structural_invariants(std::string& detail) {
  Rng rng(0xabc);
  // Heatmap block sums and descriptor norms on random nets/inputs.
  for (int trial = 0; trial < 5; ++trial) {
    const auto net = make_network<float>(NetworkShape::standard(), rng.next_u64());
    const Image img = testutil::synthetic_image(64, 64, rng.next_u64());
    const auto out = forward(net, img);
    const auto heat = heatmap_from_logits(out.logits, out.cells_h, out.cells_w);
    for (int ci = 0; ci < out.cells_h; ++ci)
      for (int cj = 0; cj < out.cells_w; ++cj) {
        double sum = 0.0;
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) sum += heat.at(ci * 8 + y, cj * 8 + x);
        if (std::abs(sum - 1.0) > 1e-5) {
          detail = "heatmap block sum off by " + std::to_string(sum - 1.0);
          return false;
        }
      }
    const PointSet pts = testutil::random_points(50, 63, 63, rng);
    const auto desc = interpolate_descriptors(out.descriptors, out.cells_h, out.cells_w, pts);
    for (int i = 0; i < 50; ++i)
      if (std::abs(desc.unit.col(i).norm() - 1.0) > 1e-6) {
        detail = "descriptor norm violation";
        return false;
      }
  }
  // Homography round trips at the training scale.
  HomographyConfig hcfg;
  for (int trial = 0; trial < 200; ++trial) {
    const Homography h = sample_homography(hcfg, 256, 256, rng);
    const PointSet pts = testutil::random_points(10, 255, 255, rng);
    const PointSet round = project_points(project_points(pts, h), h.inverse());
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (std::hypot(round.pts[i].x - pts.pts[i].x, round.pts[i].y - pts.pts[i].y) > 1e-6) {
        detail = "homography round trip above 1e-6 px";
        return false;
      }
  }
  // Exactly one homography per batch: with noise off, every pair must be
  // related by the single returned matrix.
  {
    testutil::TempDir dir("acc_batch");
    testutil::write_corpus(dir.path(), 4, 96, 96, 7);
    const CorpusSource corpus = load_corpus(dir.path(), 48);
    TrainConfig cfg;
    cfg.crop_size = 48;
    cfg.batch_size = 4;
    cfg.homography = HomographyConfig{3.0, 8.0, 0.05};
    cfg.noise.skip_probability = 1.0;
    Rng brng(3);
    const Batch batch = make_batch(corpus, cfg, brng);
    for (std::size_t e = 0; e < batch.src.size(); ++e) {
      const Image expect = warp_image(batch.src[e], batch.h);
      double max_err = 0.0;
      const ValidityMask mask = valid_mask(48, 48, batch.h);
      for (std::size_t i = 0; i < expect.size(); ++i)
        if (mask.data.v[i])
          max_err = std::max(max_err, double(std::abs(expect.v[i] - batch.warped[e].v[i])));
      if (max_err > 1e-6) {
        detail = "batch element not related by the batch homography";
        return false;
      }
    }
  }
  // Noise variance guard over 1000 seeds.
  const Image img = testutil::synthetic_image(48, 48, 5);
  NoisePipelineConfig ncfg;
  const double floor = ncfg.variance_guard_ratio * image_variance(img);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng nrng(seed);
    if (image_variance(apply_pipeline(img, nrng, ncfg)) < floor) {
      detail = "variance guard violated at seed " + std::to_string(seed);
      return false;
    }
  }
  return true;
}

bool closed_forms(std::string& detail) {
  // Uniform heatmap keypoint loss = ln 64.
  Plane<double> uniform(16, 16, 1.0 / 64.0);
  TargetSet t;
  t.k_prime.push_back({3, 4});
  t.k_prime_h.push_back({5, 6});
  t.source_indices.push_back(0);
  if (std::abs(keypoint_loss(uniform, uniform, t) - std::log(64.0)) > 1e-9) {
    detail = "uniform keypoint loss != ln 64";
    return false;
  }
  // Identity-pair descriptor loss L_gt = 0.
  Rng rng(9);
  const Mat<double> d = testutil::random_unit_descriptors(32, 12, rng);
  GeometricMatch gm;
  DescriptorMatch dm;
  for (int i = 0; i < 12; ++i) {
    gm.idx.push_back(i);
    gm.dist.push_back(0.0);
    dm.idx.push_back(i);
  }
  Rng srng(1);
  if (std::abs(descriptor_loss(d, d, gm, dm, srng, 2).gt) > 1e-9) {
    detail = "identity-pair L_gt != 0";
    return false;
  }
  // Identical-heatmap heatmap loss = 0.
  const Plane<double> p = testutil::random_plane(32, 32, rng);
  if (std::abs(heatmap_loss(p, p, Homography::identity(), 2000.0)) > 1e-10) {
    detail = "identical-heatmap loss != 0";
    return false;
  }
  return true;
}

// Planted features shared by both images make a deterministic report.
class SchemaProvider : public FeatureProvider {
 public:
  Features features_for(const std::string& image_path) override {
    Features f;
    f.image_id = path_stem(image_path);
    f.height = 64;
    f.width = 64;
    Rng rng(4);
    f.keypoints = testutil::random_points(24, 63, 63, rng);
    f.descriptors = testutil::random_unit_descriptors(32, 24, rng).cast<float>();
    return f;
  }
};

bool metric_schema(std::string& detail) {
  testutil::TempDir dir("acc_schema");
  write_pgm(dir.file("a.pgm"), testutil::synthetic_image(64, 64, 1));
  write_pgm(dir.file("b.pgm"), testutil::synthetic_image(64, 64, 2));
  std::vector<PairRecord> records;
  records.push_back(
      {dir.file("a.pgm"), dir.file("a.pgm"), "identity", "-", "illumination", "", ""});
  records.push_back({dir.file("b.pgm"), dir.file("b.pgm"), "identity", "-", "viewpoint", "", ""});

  SchemaProvider provider;
  for (double radius : {25.0, 20.0}) {
    EvalConfig cfg;  // eps 3 and 5 px, theta_desc 0.8 by default
    cfg.coverage_radius_px = radius;
    const EvalReport report = evaluate_dataset(provider, records, cfg);
    const std::string json = report_to_json_string(report);
    for (const char* needle :
         {"\"repeatability\"", "\"precision\"", "\"coverage\"", "\"harmonic_mean_all\"",
          "\"harmonic_mean_rep_prec\"", "\"illumination\"", "\"viewpoint\"", "\"3\"", "\"5\"",
          "\"theta_desc\": 0.8"}) {
      if (json.find(needle) == std::string::npos) {
        detail = std::string("missing ") + needle;
        return false;
      }
    }
    const std::string radius_echo = "\"coverage_radius_px\": " + std::to_string(int(radius)) + ".0";
    if (json.find(radius_echo) == std::string::npos) {
      detail = "missing radius echo " + radius_echo;
      return false;
    }
  }
  return true;
}

bool determinism(std::string& detail) {
  testutil::TempDir corpus_dir("acc_det");
  testutil::write_corpus(corpus_dir.path(), 6, 96, 96, 11);
  const CorpusSource corpus = load_corpus(corpus_dir.path(), 64);
  TrainConfig cfg;
  cfg.seed = 123;
  cfg.crop_size = 64;
  cfg.batch_size = 2;
  cfg.steps_per_epoch = 50;
  cfg.epochs_constant = 1;
  cfg.epochs_decay = 0;
  cfg.max_steps = 50;
  cfg.homography = HomographyConfig{4.0, 12.0, 0.06};
  cfg.extraction.train_window_src = 16;
  cfg.extraction.train_window_warp = 8;

  testutil::TempDir a("acc_det_a"), b("acc_det_b");
  train_loop(corpus, cfg, a.path());
  train_loop(corpus, cfg, b.path());
  auto slurp = [](const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string la = slurp(a.file("metrics.jsonl"));
  if (la.empty() || la != slurp(b.file("metrics.jsonl"))) {
    detail = "metrics logs differ across identical runs";
    return false;
  }

  // Checkpoint save/load round trip: bit-identical forward outputs.
  Network<float> net = make_network<float>(NetworkShape::standard(), 77);
  AdamW<float> opt(net, AdamWConfig{});
  save_train_checkpoint(a.file("rt.ckpt"), net, opt, 9);
  Network<float> loaded = make_network<float>(NetworkShape::standard(), 1);
  AdamW<float> opt2(loaded, AdamWConfig{});
  std::uint64_t step = 0;
  load_train_checkpoint(a.file("rt.ckpt"), loaded, opt2, step);
  const Image img = testutil::synthetic_image(64, 64, 13);
  const auto fa = forward(net, img);
  const auto fb = forward(loaded, img);
  if (fa.logits != fb.logits || fa.descriptors != fb.descriptors) {
    detail = "checkpoint round trip changed forward outputs";
    return false;
  }
  return true;
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  {
    Rng rng(0x0c1);
    const auto start = Clock::now();
    const bool pass = oracle_matching(rng) && oracle_targets(rng) && oracle_bilinear(rng) &&
                      oracle_masks(rng) && oracle_metrics(rng);
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    report(1, "oracle equivalence (matching, targets, bilinear, masks, metrics)",
           pass && secs < 60.0, "ran in " + std::to_string(secs) + " s (budget 60)");
  }
  {
    const auto start = Clock::now();
    GradientHarness harness(0x0c2);
    const bool kp = gradient_term(harness, Term::keypoints, "keypoint nll");
    const bool hm = gradient_term(harness, Term::heatmaps, "heatmap mse");
    const bool de = gradient_term(harness, Term::descriptors, "descriptor terms");
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    report(2, "loss gradients vs central finite differences", kp && hm && de && secs < 300.0,
           "ran in " + std::to_string(secs) + " s (budget 300)");
  }
  {
    const auto start = Clock::now();
    std::string detail;
    const bool pass = structural_invariants(detail);
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    report(3, "structural invariants", pass && secs < 120.0,
           pass ? "ran in " + std::to_string(secs) + " s (budget 120)" : detail);
  }
  {
    std::string detail;
    report(4, "closed-form loss checks", closed_forms(detail), detail);
  }
  {
    std::string detail;
    report(6, "metric schema parity (families, thresholds, radii)", metric_schema(detail), detail);
  }
  {
    const double hm = harmonic_mean({0.86, 0.57, 0.57});
    report(7, "harmonic-mean spot check 0.64 +/- 0.005", std::abs(hm - 0.64) <= 0.005,
           "computed " + std::to_string(hm));
  }
  {
    std::string detail;
    report(8, "determinism (replayed logs, checkpoint round trip)", determinism(detail), detail);
  }
  std::printf("%d criterion(s) failed; total runtime %.1f s\n", g_failures,
              std::chrono::duration<double>(Clock::now() - t0).count());
  return g_failures == 0 ? 0 : 1;
}
