// Acceptance criterion 5: the toy self-supervised training run.
//   500 steps, 20 images, batch 8, 256x256 crops, AdamW at 5e-4 with the
//   paper-default loss weights. The smoothed total loss over the final 50
//   steps must fall below half of the steps 1-10 average, and post-run
//   repeatability on warped self-pairs must reach at least twice the
//   equal-count random-keypoint baseline. Wall clock must stay under 30 min.
// GP_SMOKE_STEPS overrides the step count for quick pilots.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "goodpoint/checkpoint.hpp"
#include "goodpoint/eval.hpp"
#include "goodpoint/image_io.hpp"
#include "goodpoint/train.hpp"
#include "support/testutil.hpp"

using namespace goodpoint;
using Clock = std::chrono::steady_clock;

namespace {

Image center_crop(const Image& img, int size) {
  const int y0 = (img.height - size) / 2;
  const int x0 = (img.width - size) / 2;
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

Features detect(const Network<float>& net, const Image& img, const ExtractionConfig& extraction) {
  const auto out = forward(net, img);
  const auto heat = heatmap_from_logits(out.logits, out.cells_h, out.cells_w);
  Features f;
  f.height = img.height;
  f.width = img.width;
  f.keypoints = extract_inference(heat, extraction);
  f.descriptors =
      interpolate_descriptors(out.descriptors, out.cells_h, out.cells_w, f.keypoints).unit;
  return f;
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  testutil::TempDir corpus_dir("smoke_corpus");
  testutil::write_corpus(corpus_dir.path(), 20, 320, 320, 0xbeef);

  TrainConfig cfg;  // paper defaults: crop 256, AdamW 5e-4/0.01, lambda_h 2000
  cfg.seed = 42;
  cfg.batch_size = 8;
  cfg.steps_per_epoch = 28;  // 18 schedule epochs cover the 500-step budget
  cfg.max_steps = 500;
  cfg.workers = 2;
  if (const char* env = std::getenv("GP_SMOKE_STEPS")) cfg.max_steps = std::atoll(env);

  const CorpusSource corpus = load_corpus(corpus_dir.path(), cfg.crop_size);
  testutil::TempDir out_dir("smoke_out");
  const TrainResult result = train_loop(corpus, cfg, out_dir.path());
  const double train_minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
  std::printf("training: %lld steps in %.1f min\n", result.steps, train_minutes);

  // Loss trajectory from the metrics log.
  std::vector<double> totals;
  {
    std::ifstream in(out_dir.path() + "/metrics.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      const auto rec = nlohmann::json::parse(line);
      if (rec.contains("step") && rec.contains("total")) totals.push_back(rec["total"]);
    }
  }
  double early = 0.0, late = 0.0;
  const std::size_t early_n = std::min<std::size_t>(10, totals.size());
  for (std::size_t i = 0; i < early_n; ++i) early += totals[i];
  early /= double(early_n);
  const std::size_t late_n = std::min<std::size_t>(50, totals.size());
  for (std::size_t i = totals.size() - late_n; i < totals.size(); ++i) late += totals[i];
  late /= double(late_n);
  std::printf("loss: steps 1-%zu mean %.4f, final-%zu mean %.4f (ratio %.3f)\n", early_n, early,
              late_n, late, late / early);

  // Post-run repeatability on warped self-pairs vs the equal-count random
  // baseline computed here in the harness.
  Network<float> net = make_network<float>(NetworkShape::standard(), 0);
  {
    AdamW<float> opt(net, cfg.optimizer);
    std::uint64_t step = 0;
    load_train_checkpoint(result.last_checkpoint, net, opt, step);
  }
  ExtractionConfig extraction;  // theta 0.021, NMS radius 4
  double trained_sum = 0.0, baseline_sum = 0.0;
  long long detected_total = 0;
  int pairs = 0;
  Rng rng(0x5eed);
  for (const std::string& path : corpus.files) {
    const Image img = center_crop(read_image(path), cfg.crop_size);
    const Homography h = sample_homography(cfg.homography, cfg.crop_size, cfg.crop_size, rng);
    const Image warped = warp_image(img, h);
    const Features fa = detect(net, img, extraction);
    const Features fb = detect(net, warped, extraction);
    if (fa.keypoints.empty() || fb.keypoints.empty()) continue;
    const CorrespondenceGt gt = CorrespondenceGt::from_homography(h);
    trained_sum += repeatability(fa.keypoints, fb.keypoints, gt, img.height, img.width,
                                 warped.height, warped.width, 3.0);
    detected_total += (long long)(fa.keypoints.size() + fb.keypoints.size());

    // Uniform random points of equal count, averaged over a few draws.
    double base = 0.0;
    const int draws = 5;
    for (int d = 0; d < draws; ++d) {
      const PointSet ra =
          testutil::random_points(int(fa.keypoints.size()), img.width - 1, img.height - 1, rng);
      const PointSet rb = testutil::random_points(int(fb.keypoints.size()), warped.width - 1,
                                                  warped.height - 1, rng);
      base += repeatability(ra, rb, gt, img.height, img.width, warped.height, warped.width, 3.0);
    }
    baseline_sum += base / draws;
    ++pairs;
  }
  const double trained = pairs > 0 ? trained_sum / pairs : 0.0;
  const double baseline = pairs > 0 ? baseline_sum / pairs : 0.0;
  std::printf("repeatability @3px: trained %.4f vs random baseline %.4f (%.1fx, %lld detections"
              " over %d pairs)\n",
              trained, baseline, baseline > 0 ? trained / baseline : 0.0, detected_total, pairs);

  const double total_minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
  const bool loss_ok = late < 0.5 * early;
  const bool rep_ok = pairs > 0 && trained >= 2.0 * baseline;
  const bool time_ok = total_minutes < 30.0;
  const bool pass = loss_ok && rep_ok && time_ok;
  std::printf("[%s] criterion 5: toy training smoke -- loss ratio %.3f (< 0.5: %s), "
              "repeatability %.1fx baseline (>= 2x: %s), %.1f min (< 30: %s)\n",
              pass ? "PASS" : "FAIL", late / early, loss_ok ? "yes" : "NO",
              baseline > 0 ? trained / baseline : 0.0, rep_ok ? "yes" : "NO", total_minutes,
              time_ok ? "yes" : "NO");
  return pass ? 0 : 1;
}
