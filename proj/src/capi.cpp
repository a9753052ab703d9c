#include "goodpoint.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "goodpoint/checkpoint.hpp"
#include "goodpoint/config.hpp"
#include "goodpoint/eval.hpp"
#include "goodpoint/features_io.hpp"
#include "goodpoint/image_io.hpp"
#include "goodpoint/matching.hpp"
#include "goodpoint/train.hpp"

namespace {

thread_local std::string g_last_error;
thread_local std::string g_scratch;

gp_status set_error(const goodpoint::Error& e) {
  g_last_error = e.what();
  return e.kind() == goodpoint::ErrorKind::usage ? GP_ERROR_USAGE : GP_ERROR_RUNTIME;
}

template <class F>
gp_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return GP_OK;
  } catch (const goodpoint::Error& e) {
    return set_error(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GP_ERROR_RUNTIME;
  }
}

std::string or_empty(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

extern "C" {

const char* gp_version(void) { return "goodpoint 1.0.0 (api 1)"; }

const char* gp_last_error(void) { return g_last_error.c_str(); }

const char* gp_default_train_config(void) {
  g_scratch = goodpoint::train_config_to_json(goodpoint::TrainConfig{});
  return g_scratch.c_str();
}

const char* gp_default_eval_config(void) {
  g_scratch = goodpoint::eval_config_to_json(goodpoint::EvalConfig{});
  return g_scratch.c_str();
}

gp_status gp_train(const char* config_path, const char* corpus_dir, const char* out_dir,
                   const char* resume_checkpoint, long long seed_override,
                   long long max_steps_override) {
  return guarded([&] {
    using namespace goodpoint;
    if (!corpus_dir || !out_dir) raise_usage("gp_train: corpus_dir and out_dir are required");
    TrainConfig cfg = load_train_config(or_empty(config_path));
    if (seed_override >= 0) cfg.seed = std::uint64_t(seed_override);
    if (max_steps_override >= 0) cfg.max_steps = max_steps_override;
    const CorpusSource corpus = load_corpus(corpus_dir, cfg.crop_size);
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream snap(std::filesystem::path(out_dir) / "resolved_config.json");
      snap << train_config_to_json(cfg);
      if (!snap) raise_runtime(std::string("cannot write resolved config under ") + out_dir);
    }
    train_loop(corpus, cfg, out_dir, or_empty(resume_checkpoint));
  });
}

gp_status gp_extract(const char* checkpoint_path, const char* const* image_paths, size_t n_images,
                     const char* out_dir, double theta_keypoint, double nms_radius,
                     int apply_nms) {
  return guarded([&] {
    using namespace goodpoint;
    if (!checkpoint_path || !image_paths || !out_dir)
      raise_usage("gp_extract: checkpoint, images and out_dir are required");
    Network<float> net = network_from_checkpoint(read_checkpoint(checkpoint_path));
    ExtractionConfig extraction;
    if (theta_keypoint >= 0) extraction.inference_threshold = theta_keypoint;
    if (nms_radius >= 0) extraction.nms_radius = nms_radius;
    if (apply_nms >= 0) extraction.apply_nms = apply_nms != 0;
    std::filesystem::create_directories(out_dir);
    ModelFeatureProvider provider(std::move(net), extraction);
    for (size_t i = 0; i < n_images; ++i) {
      const std::string image_path = image_paths[i];
      const Features f = provider.features_for(image_path);
      KeypointFile kf;
      kf.image_id = f.image_id;
      kf.points = f.keypoints;
      kf.descriptors = f.descriptors;
      write_keypoint_file(
          (std::filesystem::path(out_dir) / (path_stem(image_path) + ".kpts")).string(), kf);
    }
  });
}

gp_status gp_eval(const char* manifest_path, const char* checkpoint_path, const char* features_dir,
                  const char* eval_config_path, const char* report_json_path,
                  const char* report_text_path, const char* viz_dir) {
  return guarded([&] {
    using namespace goodpoint;
    if (!manifest_path) raise_usage("gp_eval: manifest is required");
    if ((checkpoint_path == nullptr) == (features_dir == nullptr))
      raise_usage("gp_eval: pass exactly one of checkpoint or features directory");
    const EvalConfig cfg = load_eval_config(or_empty(eval_config_path));
    const auto pairs = read_manifest(manifest_path);
    if (pairs.empty()) raise_usage(std::string("manifest has no pairs: ") + manifest_path);

    std::unique_ptr<FeatureProvider> provider;
    if (checkpoint_path) {
      ExtractionConfig extraction;
      extraction.inference_threshold = cfg.theta_keypoint;
      extraction.nms_radius = cfg.nms_radius;
      extraction.apply_nms = cfg.apply_nms;
      provider = std::make_unique<ModelFeatureProvider>(
          network_from_checkpoint(read_checkpoint(checkpoint_path)), extraction);
    } else {
      provider = std::make_unique<FileFeatureProvider>(features_dir);
    }
    if (viz_dir) std::filesystem::create_directories(viz_dir);
    const EvalReport report = evaluate_dataset(*provider, pairs, cfg, or_empty(viz_dir));

    const auto usable = report.splits.find("all");
    if (usable == report.splits.end() || usable->second.pair_count == 0)
      raise_runtime("all pairs were skipped");

    if (report_json_path) {
      std::ofstream out(report_json_path);
      out << report_to_json_string(report);
      if (!out) raise_runtime(std::string("cannot write report: ") + report_json_path);
    }
    const std::string text = report_to_text(report);
    if (report_text_path) {
      std::ofstream out(report_text_path);
      out << text;
      if (!out) raise_runtime(std::string("cannot write report: ") + report_text_path);
    } else {
      std::fputs(text.c_str(), stdout);
    }
  });
}

gp_status gp_match(const char* keypoints_a_path, const char* keypoints_b_path,
                   const char* out_path, const char* homography_path, double theta_desc,
                   double theta_dist) {
  return guarded([&] {
    using namespace goodpoint;
    if (!keypoints_a_path || !keypoints_b_path || !out_path)
      raise_usage("gp_match: two keypoint files and an output path are required");
    const KeypointFile a = read_keypoint_file(keypoints_a_path);
    const KeypointFile b = read_keypoint_file(keypoints_b_path);
    if (a.descriptors.cols() != Eigen::Index(a.points.size()) ||
        b.descriptors.cols() != Eigen::Index(b.points.size()))
      raise_usage("gp_match: both keypoint files need descriptors");
    if (a.points.empty() || b.points.empty()) {
      write_match_file(out_path, {});
      return;
    }
    const DescriptorMatch dm = match_descriptors(a.descriptors, b.descriptors);
    std::vector<MatchFileRow> rows;
    if (homography_path) {
      const auto hs = read_homography_file(homography_path);
      if (hs.empty()) raise_usage("gp_match: empty homography file");
      const GeometricMatch gm = match_geometric(project_points(a.points, hs.front()), b.points);
      for (std::size_t i = 0; i < a.points.size(); ++i) {
        MatchFileRow row;
        row.i = int(i);
        row.j = dm.idx[i];
        row.similarity =
            double(a.descriptors.col(Eigen::Index(i)).dot(b.descriptors.col(dm.idx[i])));
        row.dist_geom = gm.dist[i];
        row.accepted = gm.idx[i] == dm.idx[i] && gm.dist[i] < theta_dist ? 1 : 0;
        rows.push_back(row);
      }
    } else {
      for (std::size_t i = 0; i < a.points.size(); ++i) {
        MatchFileRow row;
        row.i = int(i);
        row.j = dm.idx[i];
        row.similarity =
            double(a.descriptors.col(Eigen::Index(i)).dot(b.descriptors.col(dm.idx[i])));
        row.dist_geom = std::numeric_limits<double>::quiet_NaN();
        row.accepted = row.similarity >= theta_desc ? 1 : 0;
        rows.push_back(row);
      }
    }
    write_match_file(out_path, rows);
  });
}

gp_status gp_checkpoint_inspect(const char* checkpoint_path, char* out, size_t out_cap) {
  return guarded([&] {
    using namespace goodpoint;
    if (!checkpoint_path || !out || out_cap == 0)
      raise_usage("gp_checkpoint_inspect: checkpoint and output buffer are required");
    const std::string text = describe_checkpoint(read_checkpoint(checkpoint_path));
    const size_t n = std::min(out_cap - 1, text.size());
    std::memcpy(out, text.data(), n);
    out[n] = '\0';
  });
}

struct gp_model {
  goodpoint::Network<float> net;
};

gp_status gp_model_open(const char* checkpoint_path, gp_model** out_model) {
  return guarded([&] {
    using namespace goodpoint;
    if (!checkpoint_path || !out_model) raise_usage("gp_model_open: bad arguments");
    auto model = std::make_unique<gp_model>();
    model->net = network_from_checkpoint(read_checkpoint(checkpoint_path));
    *out_model = model.release();
  });
}

void gp_model_close(gp_model* model) { delete model; }

gp_status gp_model_detect(gp_model* model, const float* intensities, int height, int width,
                          double theta_keypoint, double nms_radius, int apply_nms,
                          gp_keypoint** out_points, float** out_descriptors, int* out_count,
                          int* out_descriptor_dim) {
  return guarded([&] {
    using namespace goodpoint;
    if (!model || !intensities || !out_points || !out_descriptors || !out_count ||
        !out_descriptor_dim)
      raise_usage("gp_model_detect: bad arguments");
    Image img(height, width);
    std::memcpy(img.v.data(), intensities, img.size() * sizeof(float));
    const ForwardResult<float> fwd = forward(model->net, img);
    const Plane<float> heat = heatmap_from_logits(fwd.logits, fwd.cells_h, fwd.cells_w);
    ExtractionConfig extraction;
    if (theta_keypoint >= 0) extraction.inference_threshold = theta_keypoint;
    if (nms_radius >= 0) extraction.nms_radius = nms_radius;
    if (apply_nms >= 0) extraction.apply_nms = apply_nms != 0;
    const PointSet pts = extract_inference(heat, extraction);
    const Mat<float> desc =
        interpolate_descriptors(fwd.descriptors, fwd.cells_h, fwd.cells_w, pts).unit;

    const int n = int(pts.size());
    const int dim = int(desc.rows());
    auto* points = static_cast<gp_keypoint*>(std::malloc(sizeof(gp_keypoint) * std::size_t(std::max(n, 1))));
    auto* descriptors =
        static_cast<float*>(std::malloc(sizeof(float) * std::size_t(std::max(n * dim, 1))));
    if (!points || !descriptors) {
      std::free(points);
      std::free(descriptors);
      raise_runtime("gp_model_detect: allocation failed");
    }
    for (int i = 0; i < n; ++i) {
      points[i].x = float(pts.pts[std::size_t(i)].x);
      points[i].y = float(pts.pts[std::size_t(i)].y);
      points[i].score = float(pts.scores[std::size_t(i)]);
      for (int d = 0; d < dim; ++d) descriptors[std::size_t(i) * dim + d] = desc(d, i);
    }
    *out_points = points;
    *out_descriptors = descriptors;
    *out_count = n;
    *out_descriptor_dim = dim;
  });
}

void gp_buffer_free(void* buffer) { std::free(buffer); }

}  // extern "C"
