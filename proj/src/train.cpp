#include "goodpoint/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "goodpoint/checkpoint.hpp"
#include "goodpoint/eval.hpp"
#include "goodpoint/image_io.hpp"
#include "goodpoint/matching.hpp"

namespace goodpoint {

CorpusSource load_corpus(const std::string& dir, int crop_size) {
  CorpusSource corpus;
  corpus.root = dir;
  for (const std::string& path : list_images(dir)) {
    try {
      const Image img = read_image(path);
      if (img.height < crop_size || img.width < crop_size) {
        std::cerr << "warning: skipping " << path << " (" << img.width << "x" << img.height
                  << " smaller than crop " << crop_size << ")\n";
        continue;
      }
      corpus.files.push_back(path);
    } catch (const Error& e) {
      std::cerr << "warning: skipping unreadable " << path << ": " << e.what() << "\n";
    }
  }
  if (corpus.files.empty())
    raise_usage("no usable images (>= " + std::to_string(crop_size) + "px) under " + dir);
  return corpus;
}

namespace {

Image random_crop(const Image& img, int crop, Rng& rng) {
  const int x0 = int(rng.uniform_int(std::uint64_t(img.width - crop + 1)));
  const int y0 = int(rng.uniform_int(std::uint64_t(img.height - crop + 1)));
  Image out(crop, crop);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

HomographyConfig scaled(const HomographyConfig& cfg, double s) {
  HomographyConfig out = cfg;
  out.max_shift_px *= s;
  out.max_perspective_px *= s;
  out.max_rotation_rad *= s;
  return out;
}

}  // namespace

Batch make_batch(const CorpusSource& corpus, const TrainConfig& cfg, Rng& rng) {
  Batch batch;
  // One homography per batch. With warp_both, each side gets its own warp and
  // the pair stays related by h2 * h1^-1.
  Homography h1 = Homography::identity();
  Homography h2;
  if (cfg.warp_both) {
    h1 = sample_homography(scaled(cfg.homography, cfg.warp_both_split), cfg.crop_size,
                           cfg.crop_size, rng);
    h2 = sample_homography(scaled(cfg.homography, 1.0 - cfg.warp_both_split), cfg.crop_size,
                           cfg.crop_size, rng);
    batch.h = h2.compose(h1.inverse());
  } else {
    h2 = sample_homography(cfg.homography, cfg.crop_size, cfg.crop_size, rng);
    batch.h = h2;
  }

  // Draw everything sequentially so batch composition is a pure function of
  // the rng state, then do the heavy crop/warp/noise work in parallel.
  struct Draw {
    Image crop;
    std::uint64_t noise_src_seed = 0, noise_warped_seed = 0;
  };
  std::vector<Draw> draws(static_cast<std::size_t>(cfg.batch_size));
  for (auto& d : draws) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const std::size_t pick = std::size_t(rng.uniform_int(corpus.files.size()));
      try {
        d.crop = random_crop(read_image(corpus.files[pick]), cfg.crop_size, rng);
        ok = true;
      } catch (const Error& e2) {
        std::cerr << "warning: skipping unreadable " << corpus.files[pick] << ": " << e2.what()
                  << "\n";
      }
    }
    if (!ok) raise_runtime("make_batch: no readable image after 100 attempts");
    d.noise_src_seed = rng.next_u64();
    d.noise_warped_seed = rng.next_u64();
  }

  batch.src.resize(draws.size());
  batch.warped.resize(draws.size());
  const int workers = std::max(1, std::min(cfg.workers, cfg.batch_size));
  auto prepare = [&](int w) {
    for (std::size_t e = std::size_t(w); e < draws.size(); e += std::size_t(workers)) {
      Image src = cfg.warp_both ? warp_image(draws[e].crop, h1) : draws[e].crop;
      Image warped = warp_image(draws[e].crop, h2);
      Rng noise_src(draws[e].noise_src_seed);
      Rng noise_warped(draws[e].noise_warped_seed);
      batch.src[e] = apply_pipeline(src, noise_src, cfg.noise);
      batch.warped[e] = apply_pipeline(warped, noise_warped, cfg.noise);
    }
  };
  if (workers == 1) {
    prepare(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(prepare, w);
    for (auto& t : threads) t.join();
  }
  return batch;
}

namespace {

struct ElementOutcome {
  LossReport report;
};

// Forward both images of one pair, estimate targets, compute the losses and
// back-propagate into grads.
ElementOutcome process_element(const Image& src, const Image& warped, const Homography& h,
                               const Network<float>& net, const TrainConfig& cfg,
                               std::uint64_t shuffle_seed, double inv_batch,
                               Network<float>& grads, ForwardCache<float>& cache_src,
                               ForwardCache<float>& cache_warped) {
  const ForwardResult<float> out_src = forward(net, src, &cache_src);
  const ForwardResult<float> out_warped = forward(net, warped, &cache_warped);

  const Plane<float> p = heatmap_from_logits(out_src.logits, out_src.cells_h, out_src.cells_w);
  const Plane<float> p_h =
      heatmap_from_logits(out_warped.logits, out_warped.cells_h, out_warped.cells_w);

  const PointSet k = extract_windowed_max(p, cfg.extraction.train_window_src);
  const PointSet k_h = extract_windowed_max(p_h, cfg.extraction.train_window_warp);

  auto [k_proj, kept] = filter_in_bounds(project_points(k, h), warped.height, warped.width);
  PointSet k_kept;
  for (int idx : kept) k_kept.push_back(k.pts[std::size_t(idx)]);

  const InterpolatedDescriptors<float> d_proj =
      interpolate_descriptors(out_src.descriptors, out_src.cells_h, out_src.cells_w, k_kept);
  const InterpolatedDescriptors<float> d_h =
      interpolate_descriptors(out_warped.descriptors, out_warped.cells_h, out_warped.cells_w, k_h);

  const TargetEstimate<float> est =
      estimate_targets(k, k_h, d_proj.unit, d_h.unit, h, cfg.theta_dist, src.height, src.width,
                       warped.height, warped.width);

  const double lambda1 = cfg.loss_weights.lambda_descriptor * inv_batch;
  const double lambda2 = cfg.loss_weights.lambda_detector * inv_batch;

  Plane<float> dp(p.height, p.width, 0.f), dp_h(p_h.height, p_h.width, 0.f);
  bool kp_skipped = false;
  const double kp =
      keypoint_loss(p, p_h, est.targets, &kp_skipped, &dp, &dp_h, lambda2);
  long long n_mask = 0;
  const double hm = heatmap_loss(p, p_h, h, cfg.loss_weights.lambda_heatmap, cfg.blur, &n_mask,
                                 &dp, &dp_h, lambda2);

  DescriptorLossParts parts;
  Mat<float> d_dproj = Mat<float>::Zero(d_proj.unit.rows(), d_proj.unit.cols());
  Mat<float> d_dh = Mat<float>::Zero(d_h.unit.rows(), d_h.unit.cols());
  if (k_kept.size() > 0) {
    Rng shuffle_rng(shuffle_seed);
    parts = descriptor_loss(d_proj.unit, d_h.unit, est.geometric, est.descriptor, shuffle_rng,
                            cfg.n_random_shuffles, cfg.wrong_match_min_dist, nullptr, &d_dproj,
                            &d_dh, lambda1,
                            cfg.descriptor_gt_accepted_only ? &est.targets.source_indices
                                                            : nullptr);
  }

  // Pull heatmap-space and descriptor-space gradients back to the network.
  Mat<float> dfield_src = Mat<float>::Zero(out_src.descriptors.rows(), out_src.descriptors.cols());
  Mat<float> dfield_warped =
      Mat<float>::Zero(out_warped.descriptors.rows(), out_warped.descriptors.cols());
  interpolate_descriptors_backward(d_proj, d_dproj, dfield_src);
  interpolate_descriptors_backward(d_h, d_dh, dfield_warped);

  backward(net, cache_src, heatmap_grad_to_logits(p, dp), std::move(dfield_src), grads);
  backward(net, cache_warped, heatmap_grad_to_logits(p_h, dp_h), std::move(dfield_warped), grads);

  ElementOutcome out;
  out.report = total_loss(kp, kp_skipped, (long long)(est.targets.size()), hm, n_mask, parts,
                          cfg.loss_weights);
  return out;
}

}  // namespace

LossReport train_step(const Batch& batch, Network<float>& net, AdamW<float>& opt, double lr,
                      const TrainConfig& cfg, Rng& rng) {
  const int batch_size = int(batch.src.size());
  if (batch_size == 0) raise_runtime("train_step: empty batch");
  const double inv_batch = 1.0 / double(batch_size);

  std::vector<std::uint64_t> shuffle_seeds(static_cast<std::size_t>(batch_size));
  for (auto& s : shuffle_seeds) s = rng.next_u64();

  const int workers = std::max(1, std::min(cfg.workers, batch_size));
  std::vector<Network<float>> worker_grads;
  std::vector<std::vector<ElementOutcome>> worker_outcomes(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) worker_grads.push_back(zeros_like(net));

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto run_worker = [&](int w) {
    try {
      ForwardCache<float> cache_src, cache_warped;  // reused across elements
      for (int e = w; e < batch_size; e += workers) {
        worker_outcomes[std::size_t(w)].push_back(
            process_element(batch.src[std::size_t(e)], batch.warped[std::size_t(e)], batch.h, net,
                            cfg, shuffle_seeds[std::size_t(e)], inv_batch,
                            worker_grads[std::size_t(w)], cache_src, cache_warped));
      }
    } catch (...) {
      errors[std::size_t(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    run_worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run_worker, w);
    for (auto& t : threads) t.join();
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);

  // Fixed reduction order keeps runs bit-reproducible.
  Network<float> grads = std::move(worker_grads[0]);
  for (int w = 1; w < workers; ++w) {
    auto dst = layer_refs(grads);
    auto src = layer_refs(worker_grads[std::size_t(w)]);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i].second->weight += src[i].second->weight;
      dst[i].second->bias += src[i].second->bias;
    }
  }

  LossReport agg;
  bool all_skipped = true;
  for (int w = 0; w < workers; ++w) {
    for (const auto& out : worker_outcomes[std::size_t(w)]) {
      const LossReport& r = out.report;
      agg.total += r.total * inv_batch;
      agg.keypoints += r.keypoints * inv_batch;
      agg.heatmaps += r.heatmaps * inv_batch;
      agg.gt += r.gt * inv_batch;
      agg.wrong += r.wrong * inv_batch;
      agg.random += r.random * inv_batch;
      agg.n_gt += r.n_gt;
      agg.n_wrong += r.n_wrong;
      agg.n_random_pairs += r.n_random_pairs;
      agg.n_mask += r.n_mask;
      agg.n_targets += r.n_targets;
      all_skipped = all_skipped && r.keypoints_skipped;
    }
  }
  agg.keypoints_skipped = all_skipped;

  opt.step(net, grads, lr);
  return agg;
}

namespace {

// F1 of repeatability and matching precision on a self-warped pair, the §5.3
// style tuning metric.
double validation_score(const Network<float>& net, const std::vector<std::string>& files,
                        const TrainConfig& cfg, int epoch) {
  if (files.empty()) return 0.0;
  ExtractionConfig extraction = cfg.extraction;
  extraction.inference_threshold = cfg.validation.theta_keypoint;
  extraction.nms_radius = cfg.validation.nms_radius;

  double sum = 0.0;
  long long count = 0;
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    Rng rng = Rng::derive(cfg.seed, 0x76616c /* "val" */, std::uint64_t(epoch) << 20 | fi);
    Image img;
    try {
      img = read_image(files[fi]);
    } catch (const Error&) {
      continue;
    }
    Rng crop_rng(rng.next_u64());
    const Image crop = random_crop(img, cfg.crop_size, crop_rng);
    const Homography h = sample_homography(cfg.homography, cfg.crop_size, cfg.crop_size, rng);
    const Image warped = warp_image(crop, h);

    auto features = [&](const Image& im) {
      const ForwardResult<float> out = forward(net, im);
      const Plane<float> heat = heatmap_from_logits(out.logits, out.cells_h, out.cells_w);
      Features f;
      f.height = im.height;
      f.width = im.width;
      f.keypoints = extract_inference(heat, extraction);
      f.descriptors =
          interpolate_descriptors(out.descriptors, out.cells_h, out.cells_w, f.keypoints).unit;
      return f;
    };
    const Features fa = features(crop);
    const Features fb = features(warped);
    const CorrespondenceGt gt = CorrespondenceGt::from_homography(h);
    const double rep = repeatability(fa.keypoints, fb.keypoints, gt, fa.height, fa.width,
                                     fb.height, fb.width, cfg.validation.eps_px);
    const double prec =
        match_and_precision(fa.keypoints, fa.descriptors, fb.keypoints, fb.descriptors, gt,
                            fa.height, fa.width, fb.height, fb.width, cfg.validation.eps_px,
                            cfg.validation.theta_desc)
            .precision;
    sum += harmonic_mean({rep, prec});
    ++count;
  }
  return count > 0 ? sum / double(count) : 0.0;
}

nlohmann::ordered_json report_to_record(long long step, int epoch, double lr,
                                        const LossReport& r) {
  return nlohmann::ordered_json{{"step", step},
                                {"epoch", epoch},
                                {"lr", lr},
                                {"total", r.total},
                                {"keypoints", r.keypoints},
                                {"heatmaps", r.heatmaps},
                                {"gt", r.gt},
                                {"wrong", r.wrong},
                                {"random", r.random},
                                {"n_gt", r.n_gt},
                                {"n_wrong", r.n_wrong},
                                {"n_random_pairs", r.n_random_pairs},
                                {"n_mask", r.n_mask},
                                {"n_targets", r.n_targets},
                                {"keypoints_skipped", r.keypoints_skipped}};
}

}  // namespace

void save_train_checkpoint(const std::string& path, const Network<float>& net, AdamW<float>& opt,
                           std::uint64_t step) {
  Checkpoint ckpt = to_checkpoint(net, step);
  ckpt.flags["adamw_steps"] = std::to_string(opt.steps_taken());
  for (const auto& [name, layer] : layer_refs(opt.first_moment())) {
    add_tensor(ckpt, "opt.m." + name + ".weight", layer->weight);
    add_tensor(ckpt, "opt.m." + name + ".bias", layer->bias);
  }
  for (const auto& [name, layer] : layer_refs(opt.second_moment())) {
    add_tensor(ckpt, "opt.v." + name + ".weight", layer->weight);
    add_tensor(ckpt, "opt.v." + name + ".bias", layer->bias);
  }
  write_checkpoint(path, ckpt);
}

void load_train_checkpoint(const std::string& path, Network<float>& net, AdamW<float>& opt,
                           std::uint64_t& step) {
  const Checkpoint ckpt = read_checkpoint(path);
  net = network_from_checkpoint(ckpt);
  step = ckpt.step;
  opt = AdamW<float>(net, AdamWConfig{});  // caller re-applies its config below
  const auto it = ckpt.flags.find("adamw_steps");
  if (it == ckpt.flags.end()) return;
  opt.set_steps_taken(std::stoll(it->second));
  auto load_into = [&](Network<float>& target, const std::string& prefix) {
    for (auto& [name, layer] : layer_refs(target)) {
      const auto wt = ckpt.tensors.find(prefix + name + ".weight");
      const auto bt = ckpt.tensors.find(prefix + name + ".bias");
      if (wt == ckpt.tensors.end() || bt == ckpt.tensors.end())
        raise_runtime("checkpoint lacks optimizer tensors for " + name);
      std::copy(wt->second.data.begin(), wt->second.data.end(), layer->weight.data());
      std::copy(bt->second.data.begin(), bt->second.data.end(), layer->bias.data());
    }
  };
  load_into(opt.first_moment(), "opt.m.");
  load_into(opt.second_moment(), "opt.v.");
}

// load_train_checkpoint resets the optimizer config; rebuild with ours.
static AdamW<float> resumed_optimizer(const std::string& path, Network<float>& net,
                                      const TrainConfig& cfg, std::uint64_t& step) {
  AdamW<float> opt(net, cfg.optimizer);
  load_train_checkpoint(path, net, opt, step);
  AdamW<float> rebuilt(net, cfg.optimizer);
  rebuilt.set_steps_taken(opt.steps_taken());
  rebuilt.first_moment() = std::move(opt.first_moment());
  rebuilt.second_moment() = std::move(opt.second_moment());
  return rebuilt;
}

TrainResult train_loop(const CorpusSource& corpus, const TrainConfig& cfg,
                       const std::string& out_dir, const std::string& resume_checkpoint) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  // Deterministic validation holdout: shuffle file order, take the tail.
  std::vector<std::string> files = corpus.files;
  Rng split_rng = Rng::derive(cfg.seed, 0x73706c /* "spl" */);
  split_rng.shuffle(files);
  std::size_t n_val = 0;
  if (files.size() >= 2) {
    n_val = std::size_t(std::llround(cfg.validation.holdout_fraction * double(files.size())));
    n_val = std::min(std::max<std::size_t>(n_val, 1), files.size() - 1);
  }
  CorpusSource train_corpus;
  train_corpus.root = corpus.root;
  train_corpus.files.assign(files.begin(), files.end() - std::ptrdiff_t(n_val));
  std::sort(train_corpus.files.begin(), train_corpus.files.end());
  std::vector<std::string> val_files(files.end() - std::ptrdiff_t(n_val), files.end());

  Network<float> net = make_network<float>(NetworkShape::standard(), cfg.seed);
  AdamW<float> opt(net, cfg.optimizer);
  std::uint64_t global_step = 0;
  if (!resume_checkpoint.empty()) opt = resumed_optimizer(resume_checkpoint, net, cfg, global_step);

  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : int((train_corpus.files.size() + cfg.batch_size - 1) / std::size_t(cfg.batch_size));
  const int total_epochs = cfg.epochs_constant + cfg.epochs_decay;
  const long long schedule_steps = (long long)(steps_per_epoch) * total_epochs;
  const long long total_steps =
      cfg.max_steps > 0 ? std::min(cfg.max_steps, schedule_steps) : schedule_steps;

  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::app);
  if (!metrics) raise_runtime("cannot open metrics log under " + out_dir);

  TrainResult result;
  result.best_validation_score = -1.0;

  while (global_step < std::uint64_t(total_steps)) {
    const int epoch = int(global_step / std::uint64_t(steps_per_epoch)) + 1;
    const double lr = scheduled_learning_rate(cfg.optimizer.learning_rate, epoch,
                                              cfg.epochs_constant, cfg.decay_factor_per_epoch);
    Rng step_rng = Rng::derive(cfg.seed, 0x737465 /* "ste" */, global_step);
    const Batch batch = make_batch(train_corpus, cfg, step_rng);
    const LossReport report = train_step(batch, net, opt, lr, cfg, step_rng);
    ++global_step;

    if (!std::isfinite(report.total)) {
      nlohmann::ordered_json diag = report_to_record((long long)(global_step), epoch, lr, report);
      diag["seed"] = cfg.seed;
      std::ofstream dump(fs::path(out_dir) / "diagnostic_dump.json");
      dump << diag.dump(2) << "\n";
      raise_runtime("non-finite loss at step " + std::to_string(global_step) +
                    "; diagnostic written to " + (fs::path(out_dir) / "diagnostic_dump.json").string());
    }
    if (cfg.log_every > 0 && (global_step % std::uint64_t(cfg.log_every)) == 0)
      metrics << report_to_record((long long)(global_step), epoch, lr, report).dump() << "\n";

    const bool epoch_end = global_step % std::uint64_t(steps_per_epoch) == 0;
    const bool run_end = global_step == std::uint64_t(total_steps);
    if (epoch_end || run_end) {
      metrics.flush();
      const double score = validation_score(net, val_files, cfg, epoch);
      nlohmann::ordered_json vrec{{"event", "validation"},
                                  {"step", (long long)(global_step)},
                                  {"epoch", epoch},
                                  {"harmonic_mean", score},
                                  {"images", (long long)(val_files.size())}};
      metrics << vrec.dump() << "\n";
      metrics.flush();

      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
      const std::string epoch_path = (fs::path(out_dir) / name).string();
      save_train_checkpoint(epoch_path, net, opt, global_step);
      result.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
      save_train_checkpoint(result.last_checkpoint, net, opt, global_step);
      if (score > result.best_validation_score) {
        result.best_validation_score = score;
        result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
        save_train_checkpoint(result.best_checkpoint, net, opt, global_step);
      }
      result.epochs = epoch;
    }
  }
  result.steps = (long long)(global_step);
  return result;
}

}  // namespace goodpoint
