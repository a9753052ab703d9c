#include "goodpoint/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "goodpoint/image_io.hpp"
#include "goodpoint/matching.hpp"

namespace goodpoint {

CorrespondenceGt CorrespondenceGt::identity() { return from_homography(Homography::identity()); }

CorrespondenceGt CorrespondenceGt::from_homography(const Homography& h) {
  CorrespondenceGt gt;
  gt.h_ = h;
  return gt;
}

CorrespondenceGt CorrespondenceGt::from_map(CorrespondenceMapData map) {
  CorrespondenceGt gt;
  gt.use_map_ = true;
  // Fit a homography over the valid correspondences so the reverse direction
  // is available; subsample to keep the DLT small.
  PointSet src, dst;
  const std::size_t total = map.valid.size();
  const std::size_t stride = std::max<std::size_t>(1, total / 2048);
  for (std::size_t i = 0; i < total; i += stride) {
    if (!map.valid.v[i]) continue;
    const int y = int(i / std::size_t(map.valid.width));
    const int x = int(i % std::size_t(map.valid.width));
    src.push_back({double(x), double(y)});
    dst.push_back({double(map.x.v[i]), double(map.y.v[i])});
  }
  if (src.size() < 4) raise_runtime("correspondence map has fewer than 4 valid entries");
  gt.h_ = fit_homography(src, dst);
  gt.map_ = std::make_shared<CorrespondenceMapData>(std::move(map));
  return gt;
}

std::optional<Vec2> CorrespondenceGt::map_a_to_b(Vec2 p) const {
  if (use_map_ && map_forward_) {
    const int x = int(std::lround(p.x));
    const int y = int(std::lround(p.y));
    if (x < 0 || x >= map_->valid.width || y < 0 || y >= map_->valid.height) return std::nullopt;
    if (!map_->valid.at(y, x)) return std::nullopt;
    return Vec2{double(map_->x.at(y, x)), double(map_->y.at(y, x))};
  }
  try {
    return h_.apply(p);
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::optional<Vec2> CorrespondenceGt::map_b_to_a(Vec2 p) const {
  if (use_map_ && !map_forward_) {
    const int x = int(std::lround(p.x));
    const int y = int(std::lround(p.y));
    if (x < 0 || x >= map_->valid.width || y < 0 || y >= map_->valid.height) return std::nullopt;
    if (!map_->valid.at(y, x)) return std::nullopt;
    return Vec2{double(map_->x.at(y, x)), double(map_->y.at(y, x))};
  }
  try {
    return h_.inverse().apply(p);
  } catch (const Error&) {
    return std::nullopt;
  }
}

CorrespondenceGt CorrespondenceGt::inverted() const {
  CorrespondenceGt gt = *this;
  gt.h_ = h_.inverse();
  gt.map_forward_ = !map_forward_;
  return gt;
}

namespace {

bool inside(Vec2 p, int height, int width) {
  return p.x >= 0.0 && p.x <= double(width - 1) && p.y >= 0.0 && p.y <= double(height - 1);
}

// One direction of repeatability: projected in-bounds detections that have a
// counterpart within eps.
std::pair<long long, long long> repeated_counts(const PointSet& from, const PointSet& to,
                                                const CorrespondenceGt& gt, int height_to,
                                                int width_to, double eps, bool forward) {
  long long in_bounds = 0, repeated = 0;
  const double eps2 = eps * eps;
  for (const Vec2& p : from.pts) {
    const auto q = forward ? gt.map_a_to_b(p) : gt.map_b_to_a(p);
    if (!q || !inside(*q, height_to, width_to)) continue;
    ++in_bounds;
    for (const Vec2& t : to.pts) {
      const double dx = q->x - t.x, dy = q->y - t.y;
      if (dx * dx + dy * dy <= eps2) {
        ++repeated;
        break;
      }
    }
  }
  return {repeated, in_bounds};
}

}  // namespace

double repeatability(const PointSet& k_a, const PointSet& k_b, const CorrespondenceGt& gt,
                     int height_a, int width_a, int height_b, int width_b, double eps,
                     bool* flagged) {
  const auto [rep_ab, n_ab] = repeated_counts(k_a, k_b, gt, height_b, width_b, eps, true);
  const auto [rep_ba, n_ba] = repeated_counts(k_b, k_a, gt, height_a, width_a, eps, false);
  if (flagged) *flagged = n_ab + n_ba == 0;
  if (n_ab + n_ba == 0) return 0.0;
  const double r_ab = n_ab > 0 ? double(rep_ab) / double(n_ab) : 0.0;
  const double r_ba = n_ba > 0 ? double(rep_ba) / double(n_ba) : 0.0;
  return 0.5 * (r_ab + r_ba);
}

namespace {

std::vector<MatchRecord> directional_matches(const PointSet& k_from, const Mat<float>& d_from,
                                             const PointSet& k_to, const Mat<float>& d_to,
                                             const CorrespondenceGt& gt, double eps,
                                             double theta_desc, bool forward) {
  std::vector<MatchRecord> out;
  if (k_from.empty() || k_to.empty()) return out;
  const DescriptorMatch dm = match_descriptors(d_from, d_to);
  const double eps2 = eps * eps;
  for (std::size_t i = 0; i < k_from.size(); ++i) {
    const int j = dm.idx[i];
    const double sim = double(d_from.col(Eigen::Index(i)).dot(d_to.col(j)));
    if (sim < theta_desc) continue;
    MatchRecord rec;
    rec.idx_a = int(i);
    rec.idx_b = j;
    rec.similarity = sim;
    const auto q = forward ? gt.map_a_to_b(k_from.pts[i]) : gt.map_b_to_a(k_from.pts[i]);
    if (q) {
      const double dx = q->x - k_to.pts[std::size_t(j)].x;
      const double dy = q->y - k_to.pts[std::size_t(j)].y;
      rec.correct = dx * dx + dy * dy <= eps2;
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace

PrecisionResult match_and_precision(const PointSet& k_a, const Mat<float>& d_a,
                                    const PointSet& k_b, const Mat<float>& d_b,
                                    const CorrespondenceGt& gt, int /*height_a*/, int /*width_a*/,
                                    int /*height_b*/, int /*width_b*/, double eps,
                                    double theta_desc) {
  PrecisionResult res;
  res.ab = directional_matches(k_a, d_a, k_b, d_b, gt, eps, theta_desc, true);
  res.ba = directional_matches(k_b, d_b, k_a, d_a, gt, eps, theta_desc, false);
  long long correct_ab = 0, correct_ba = 0;
  for (const auto& m : res.ab) {
    if (!m.correct) continue;
    ++correct_ab;
    res.correct_in_a.push_back(k_a.pts[std::size_t(m.idx_a)]);
    res.correct_in_b.push_back(k_b.pts[std::size_t(m.idx_b)]);
  }
  for (const auto& m : res.ba) {
    if (!m.correct) continue;
    ++correct_ba;
    res.correct_in_b.push_back(k_b.pts[std::size_t(m.idx_a)]);
    res.correct_in_a.push_back(k_a.pts[std::size_t(m.idx_b)]);
  }
  res.flagged = res.ab.empty() && res.ba.empty();
  const double p_ab = res.ab.empty() ? 0.0 : double(correct_ab) / double(res.ab.size());
  const double p_ba = res.ba.empty() ? 0.0 : double(correct_ba) / double(res.ba.size());
  res.precision = res.flagged ? 0.0 : 0.5 * (p_ab + p_ba);
  return res;
}

double coverage(const PointSet& correct_matches, int height, int width, double radius,
                const Plane<std::uint8_t>* region_mask) {
  if (radius <= 0.0) raise_runtime("coverage: radius must be positive");
  if (height <= 0 || width <= 0) return 0.0;
  Plane<std::uint8_t> covered(height, width, 0);
  const double r2 = radius * radius;
  for (const Vec2& p : correct_matches.pts) {
    const int y0 = std::max(0, int(std::ceil(p.y - radius)));
    const int y1 = std::min(height - 1, int(std::floor(p.y + radius)));
    const int x0 = std::max(0, int(std::ceil(p.x - radius)));
    const int x1 = std::min(width - 1, int(std::floor(p.x + radius)));
    for (int y = y0; y <= y1; ++y) {
      const double dy = double(y) - p.y;
      for (int x = x0; x <= x1; ++x) {
        const double dx = double(x) - p.x;
        if (dx * dx + dy * dy <= r2) covered.at(y, x) = 1;
      }
    }
  }
  long long num = 0, den = 0;
  for (std::size_t i = 0; i < covered.size(); ++i) {
    if (region_mask && !region_mask->v[i]) continue;
    ++den;
    num += covered.v[i];
  }
  return den > 0 ? double(num) / double(den) : 0.0;
}

double harmonic_mean(const std::vector<double>& metrics) {
  if (metrics.empty()) raise_runtime("harmonic_mean: empty metric list");
  double denom = 0.0;
  for (double m : metrics) {
    if (m == 0.0) return 0.0;
    denom += 1.0 / m;
  }
  return double(metrics.size()) / denom;
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

std::vector<PairRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise_usage("cannot open manifest: " + path);
  std::vector<PairRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    PairRecord rec;
    if (!(ls >> rec.image_a >> rec.image_b >> rec.gt_kind)) continue;  // blank line
    if (rec.gt_kind != "homography" && rec.gt_kind != "corrmap" && rec.gt_kind != "identity")
      raise_usage("manifest line " + std::to_string(line_no) + ": unknown gt kind '" +
                  rec.gt_kind + "'");
    ls >> rec.gt_path >> rec.split >> rec.mask_a >> rec.mask_b;
    if (rec.gt_kind != "identity" && (rec.gt_path.empty() || rec.gt_path == "-"))
      raise_usage("manifest line " + std::to_string(line_no) + ": gt path required");
    if (rec.split == "-") rec.split.clear();
    if (rec.mask_a == "-") rec.mask_a.clear();
    if (rec.mask_b == "-") rec.mask_b.clear();
    records.push_back(std::move(rec));
  }
  return records;
}

ModelFeatureProvider::ModelFeatureProvider(Network<float> net, ExtractionConfig extraction)
    : net_(std::move(net)), extraction_(extraction) {}

Features ModelFeatureProvider::features_for(const std::string& image_path) {
  Image img = read_image(image_path);
  if (img.height % kCellSize != 0 || img.width % kCellSize != 0) {
    std::cerr << "warning: " << image_path << " is " << img.width << "x" << img.height
              << "; center-cropping to a multiple of " << kCellSize << "\n";
    img = center_crop_to_cell_multiple(img);
  }
  const ForwardResult<float> out = forward(net_, img);
  const Plane<float> heat = heatmap_from_logits(out.logits, out.cells_h, out.cells_w);
  Features f;
  f.image_id = path_stem(image_path);
  f.height = img.height;
  f.width = img.width;
  f.keypoints = extract_inference(heat, extraction_);
  f.descriptors =
      interpolate_descriptors(out.descriptors, out.cells_h, out.cells_w, f.keypoints).unit;
  return f;
}

FileFeatureProvider::FileFeatureProvider(std::string dir) : dir_(std::move(dir)) {}

Features FileFeatureProvider::features_for(const std::string& image_path) {
  const std::string path = (std::filesystem::path(dir_) / (path_stem(image_path) + ".kpts")).string();
  KeypointFile kf = read_keypoint_file(path);
  const Image img = read_image(image_path);
  Features f;
  f.image_id = kf.image_id;
  f.height = img.height;
  f.width = img.width;
  f.keypoints = std::move(kf.points);
  f.descriptors = std::move(kf.descriptors);
  return f;
}

namespace {

CorrespondenceGt load_gt(const PairRecord& rec) {
  if (rec.gt_kind == "identity") return CorrespondenceGt::identity();
  if (rec.gt_kind == "homography") {
    const auto hs = read_homography_file(rec.gt_path);
    if (hs.empty()) raise_runtime("no homography in " + rec.gt_path);
    return CorrespondenceGt::from_homography(hs.front());
  }
  return CorrespondenceGt::from_map(read_correspondence_map(rec.gt_path));
}

void keep_top_k(Features& f, int k) {
  if (k <= 0 || int(f.keypoints.size()) <= k) return;
  std::vector<int> order(f.keypoints.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return f.keypoints.scores[std::size_t(a)] > f.keypoints.scores[std::size_t(b)];
  });
  order.resize(std::size_t(k));
  PointSet pts;
  Mat<float> desc(f.descriptors.rows(), k);
  for (int i = 0; i < k; ++i) {
    pts.push_back(f.keypoints.pts[std::size_t(order[std::size_t(i)])],
                  f.keypoints.scores[std::size_t(order[std::size_t(i)])]);
    if (f.descriptors.cols() > 0) desc.col(i) = f.descriptors.col(order[std::size_t(i)]);
  }
  f.keypoints = std::move(pts);
  f.descriptors = std::move(desc);
}

void apply_region_mask(Features& f, const Plane<std::uint8_t>& mask) {
  PointSet pts;
  std::vector<int> keep;
  for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
    const int x = int(std::lround(f.keypoints.pts[i].x));
    const int y = int(std::lround(f.keypoints.pts[i].y));
    if (x < 0 || x >= mask.width || y < 0 || y >= mask.height || !mask.at(y, x)) continue;
    keep.push_back(int(i));
    pts.push_back(f.keypoints.pts[i], f.keypoints.scores.size() == f.keypoints.size()
                                          ? f.keypoints.scores[i]
                                          : 0.0);
  }
  Mat<float> desc(f.descriptors.rows(), Eigen::Index(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (f.descriptors.cols() > 0) desc.col(Eigen::Index(i)) = f.descriptors.col(keep[i]);
  f.keypoints = std::move(pts);
  f.descriptors = std::move(desc);
}

Plane<std::uint8_t> load_region_mask(const std::string& path) {
  const Image img = read_image(path);
  Plane<std::uint8_t> mask(img.height, img.width, 0);
  for (std::size_t i = 0; i < img.size(); ++i) mask.v[i] = img.v[i] > 0.5f ? 1 : 0;
  return mask;
}

void write_match_viz(const std::string& path, const std::string& img_a_path,
                     const std::string& img_b_path, const Features& fa, const Features& fb,
                     const std::vector<MatchRecord>& matches) {
  const Image a = read_image(img_a_path);
  const Image b = read_image(img_b_path);
  const int h = std::max(a.height, b.height);
  const int w = a.width + b.width;
  Image r(h, w, 0.f), g(h, w, 0.f), bl(h, w, 0.f);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) r.at(y, x) = g.at(y, x) = bl.at(y, x) = a.at(y, x);
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x)
      r.at(y, x + a.width) = g.at(y, x + a.width) = bl.at(y, x + a.width) = b.at(y, x);
  auto line = [&](Vec2 p, Vec2 q, bool correct) {
    const int steps = int(std::hypot(q.x - p.x, q.y - p.y)) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = double(s) / steps;
      const int x = int(std::lround(p.x + t * (q.x - p.x)));
      const int y = int(std::lround(p.y + t * (q.y - p.y)));
      if (x < 0 || x >= w || y < 0 || y >= h) continue;
      r.at(y, x) = correct ? 0.f : 1.f;
      g.at(y, x) = correct ? 1.f : 0.f;
      bl.at(y, x) = 0.f;
    }
  };
  for (const auto& m : matches)
    line(fa.keypoints.pts[std::size_t(m.idx_a)],
         {fb.keypoints.pts[std::size_t(m.idx_b)].x + a.width,
          fb.keypoints.pts[std::size_t(m.idx_b)].y},
         m.correct);
  write_ppm(path, r, g, bl);
}

}  // namespace

EvalReport evaluate_dataset(FeatureProvider& provider, const std::vector<PairRecord>& pairs,
                            const EvalConfig& cfg, const std::string& viz_dir) {
  EvalReport report;
  report.config = cfg;
  int viz_index = 0;
  for (const auto& rec : pairs) {
    PairMetrics pm;
    pm.image_a = rec.image_a;
    pm.image_b = rec.image_b;
    pm.split = rec.split;
    try {
      const CorrespondenceGt gt = load_gt(rec);
      Features fa = provider.features_for(rec.image_a);
      Features fb = provider.features_for(rec.image_b);
      keep_top_k(fa, cfg.max_keypoints);
      keep_top_k(fb, cfg.max_keypoints);
      Plane<std::uint8_t> mask_a, mask_b;
      if (!rec.mask_a.empty()) {
        mask_a = load_region_mask(rec.mask_a);
        apply_region_mask(fa, mask_a);
      }
      if (!rec.mask_b.empty()) {
        mask_b = load_region_mask(rec.mask_b);
        apply_region_mask(fb, mask_b);
      }
      for (const double eps : cfg.eps_px) {
        const double rep = repeatability(fa.keypoints, fb.keypoints, gt, fa.height, fa.width,
                                         fb.height, fb.width, eps);
        const PrecisionResult pr =
            match_and_precision(fa.keypoints, fa.descriptors, fb.keypoints, fb.descriptors, gt,
                                fa.height, fa.width, fb.height, fb.width, eps, cfg.theta_desc);
        const double cov_a = coverage(pr.correct_in_a, fa.height, fa.width,
                                      cfg.coverage_radius_px, rec.mask_a.empty() ? nullptr : &mask_a);
        const double cov_b = coverage(pr.correct_in_b, fb.height, fb.width,
                                      cfg.coverage_radius_px, rec.mask_b.empty() ? nullptr : &mask_b);
        const double cov = 0.5 * (cov_a + cov_b);
        pm.repeatability[eps] = rep;
        pm.precision[eps] = pr.precision;
        pm.coverage[eps] = cov;
        pm.harmonic_all[eps] = harmonic_mean({rep, pr.precision, cov});
        pm.harmonic_rp[eps] = harmonic_mean({rep, pr.precision});
        if (!viz_dir.empty() && eps == cfg.eps_px.front() && viz_index < 16) {
          const std::string out = (std::filesystem::path(viz_dir) /
                                   ("match_" + std::to_string(viz_index) + "_" + fa.image_id +
                                    "_" + fb.image_id + ".ppm"))
                                      .string();
          write_match_viz(out, rec.image_a, rec.image_b, fa, fb, pr.ab);
          ++viz_index;
        }
      }
      pm.ok = true;
    } catch (const Error& e) {
      pm.ok = false;
      pm.error = e.what();
      report.skipped.push_back(rec.image_a + " <-> " + rec.image_b + ": " + e.what());
    }
    report.pairs.push_back(std::move(pm));
  }

  // Mean aggregation per split and overall.
  auto accumulate = [&](SplitSummary& s, const PairMetrics& pm) {
    ++s.pair_count;
    for (const auto& [eps, v] : pm.repeatability) s.repeatability[eps] += v;
    for (const auto& [eps, v] : pm.precision) s.precision[eps] += v;
    for (const auto& [eps, v] : pm.coverage) s.coverage[eps] += v;
    for (const auto& [eps, v] : pm.harmonic_all) s.harmonic_all[eps] += v;
    for (const auto& [eps, v] : pm.harmonic_rp) s.harmonic_rp[eps] += v;
  };
  for (const auto& pm : report.pairs) {
    if (!pm.ok) continue;
    accumulate(report.splits["all"], pm);
    if (!pm.split.empty()) accumulate(report.splits[pm.split], pm);
  }
  for (auto& [name, s] : report.splits) {
    if (s.pair_count == 0) continue;
    auto scale = [&](std::map<double, double>& m) {
      for (auto& [eps, v] : m) v /= double(s.pair_count);
    };
    scale(s.repeatability);
    scale(s.precision);
    scale(s.coverage);
    scale(s.harmonic_all);
    scale(s.harmonic_rp);
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string report_to_text(const EvalReport& report) {
  std::ostringstream os;
  os << "eval config: theta_keypoint=" << report.config.theta_keypoint
     << " theta_desc=" << report.config.theta_desc
     << " coverage_radius=" << report.config.coverage_radius_px << "px nms="
     << (report.config.apply_nms ? "on" : "off") << " (radius " << report.config.nms_radius
     << ")";
  if (report.config.max_keypoints > 0) os << " top-k=" << report.config.max_keypoints;
  os << "\n";
  for (const auto& [split, s] : report.splits) {
    os << "split " << split << " (" << s.pair_count << " pairs)\n";
    for (const double eps : report.config.eps_px) {
      auto get = [&](const std::map<double, double>& m) {
        const auto it = m.find(eps);
        return it == m.end() ? 0.0 : it->second;
      };
      os << "  " << eps << " px: repeatability " << fmt(get(s.repeatability)) << "  precision "
         << fmt(get(s.precision)) << "  coverage " << fmt(get(s.coverage)) << "  harmonic-mean(all) "
         << fmt(get(s.harmonic_all)) << "  harmonic-mean(rep,prec) " << fmt(get(s.harmonic_rp))
         << "\n";
    }
  }
  if (!report.skipped.empty()) {
    os << "skipped pairs:\n";
    for (const auto& s : report.skipped) os << "  " << s << "\n";
  }
  return os.str();
}

std::string report_to_json_string(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["config"] = {{"eps_px", report.config.eps_px},
                 {"coverage_radius_px", report.config.coverage_radius_px},
                 {"theta_keypoint", report.config.theta_keypoint},
                 {"theta_desc", report.config.theta_desc},
                 {"nms_radius", report.config.nms_radius},
                 {"apply_nms", report.config.apply_nms},
                 {"max_keypoints", report.config.max_keypoints}};
  auto eps_key = [](double e) {
    std::ostringstream os;
    os << e;
    return os.str();
  };
  auto metrics_json = [&](const std::map<double, double>& m) {
    nlohmann::ordered_json out;
    for (const auto& [eps, v] : m) out[eps_key(eps)] = v;
    return out;
  };
  nlohmann::ordered_json splits;
  for (const auto& [split, s] : report.splits) {
    splits[split] = {{"pair_count", s.pair_count},
                     {"repeatability", metrics_json(s.repeatability)},
                     {"precision", metrics_json(s.precision)},
                     {"coverage", metrics_json(s.coverage)},
                     {"harmonic_mean_all", metrics_json(s.harmonic_all)},
                     {"harmonic_mean_rep_prec", metrics_json(s.harmonic_rp)}};
  }
  j["splits"] = splits;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& pm : report.pairs) {
    nlohmann::ordered_json p = {{"image_a", pm.image_a}, {"image_b", pm.image_b},
                                {"split", pm.split},     {"ok", pm.ok}};
    if (pm.ok) {
      p["repeatability"] = metrics_json(pm.repeatability);
      p["precision"] = metrics_json(pm.precision);
      p["coverage"] = metrics_json(pm.coverage);
      p["harmonic_mean_all"] = metrics_json(pm.harmonic_all);
      p["harmonic_mean_rep_prec"] = metrics_json(pm.harmonic_rp);
    } else {
      p["error"] = pm.error;
    }
    pairs.push_back(p);
  }
  j["pairs"] = pairs;
  j["skipped"] = report.skipped;
  return j.dump(2) + "\n";
}

}  // namespace goodpoint
