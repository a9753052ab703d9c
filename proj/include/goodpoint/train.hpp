#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "goodpoint/augment.hpp"
#include "goodpoint/geometry.hpp"
#include "goodpoint/keypoints.hpp"
#include "goodpoint/losses.hpp"
#include "goodpoint/model.hpp"
#include "goodpoint/optim.hpp"

namespace goodpoint {

struct ValidationConfig {
  double holdout_fraction = 0.02;
  double eps_px = 3.0;
  double theta_desc = 0.8;
  double theta_keypoint = 0.021;
  double nms_radius = 4.0;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 16;
  int crop_size = 256;
  int epochs_constant = 8;
  int epochs_decay = 10;
  double decay_factor_per_epoch = 0.75;
  int steps_per_epoch = 0;  // 0: one pass over the training files per epoch
  long long max_steps = 0;  // 0: run the full schedule
  AdamWConfig optimizer;
  LossWeights loss_weights;
  double theta_dist = 4.0;
  int n_random_shuffles = 2;
  double wrong_match_min_dist = 7.0;
  bool descriptor_gt_accepted_only = false;
  HomographyConfig homography;
  bool warp_both = false;
  double warp_both_split = 0.5;
  NoisePipelineConfig noise;
  BlurConfig blur;
  ExtractionConfig extraction;
  ValidationConfig validation;
  int workers = 2;
  int log_every = 1;
};

struct CorpusSource {
  std::string root;
  std::vector<std::string> files;  // sorted; all large enough for the crop
};

// Readable images under dir that fit the crop; smaller sources are skipped
// with a warning. Errors when nothing usable remains.
CorpusSource load_corpus(const std::string& dir, int crop_size);

struct Batch {
  std::vector<Image> src;     // I: noise(crop) (or noise(warp(crop, H1)) with warp_both)
  std::vector<Image> warped;  // I_h: noise(warp(..., H))
  Homography h;               // the single homography relating every pair
};

// Random crops with one shared homography per batch; the noise pipeline runs
// independently per image. Unreadable files are skipped with a warning.
Batch make_batch(const CorpusSource& corpus, const TrainConfig& cfg, Rng& rng);

// Forward both images, estimate targets, compute all losses, and apply one
// optimizer update. rng drives the descriptor-loss shuffles.
LossReport train_step(const Batch& batch, Network<float>& net, AdamW<float>& opt, double lr,
                      const TrainConfig& cfg, Rng& rng);

struct TrainResult {
  long long steps = 0;
  int epochs = 0;
  double best_validation_score = 0.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

// Full schedule: epochs_constant at the base rate, then per-epoch exponential
// decay for epochs_decay epochs. Writes per-epoch checkpoints, best.ckpt,
// last.ckpt, metrics.jsonl and resolved_config.json under out_dir. Non-finite
// losses halt with a diagnostic dump.
TrainResult train_loop(const CorpusSource& corpus, const TrainConfig& cfg,
                       const std::string& out_dir, const std::string& resume_checkpoint = "");

// Moments + step counter round-trip so resumed runs replay bit-exactly.
void save_train_checkpoint(const std::string& path, const Network<float>& net, AdamW<float>& opt,
                           std::uint64_t step);
void load_train_checkpoint(const std::string& path, Network<float>& net, AdamW<float>& opt,
                           std::uint64_t& step);

}  // namespace goodpoint
