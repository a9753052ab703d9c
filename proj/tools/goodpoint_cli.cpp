// Command-line front end. Links only the C API of the shared library.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "goodpoint.h"

namespace {

int finish(gp_status status) {
  if (status != GP_OK) std::fprintf(stderr, "error: %s\n", gp_last_error());
  return int(status);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"goodpoint: self-supervised keypoint detection and description"};
  app.set_version_flag("--version", gp_version());
  app.require_subcommand(1);
  app.footer(std::string("train config keys and defaults:\n") + gp_default_train_config() +
             "\neval config keys and defaults:\n" + gp_default_eval_config());

  // train
  auto* train = app.add_subcommand("train", "run the self-supervised training loop");
  std::string train_config, corpus_dir, train_out, resume;
  long long seed_override = -1, max_steps = -1;
  train->add_option("--config", train_config, "training config JSON (defaults when omitted)");
  train->add_option("--corpus", corpus_dir, "directory of training images (PGM/PPM)")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--max-steps", max_steps, "override the config step cap");

  // extract
  auto* extract = app.add_subcommand("extract", "write keypoint/descriptor files for images");
  std::string ckpt, extract_out;
  std::vector<std::string> images;
  double theta_keypoint = -1.0, nms_radius = -1.0;
  int apply_nms = -1;
  extract->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  extract->add_option("--out", extract_out, "output directory")->required();
  extract->add_option("images", images, "image files")->required();
  extract->add_option("--theta-keypoint", theta_keypoint, "detection threshold (default 0.021)");
  extract->add_option("--nms-radius", nms_radius, "suppression radius in px (default 4)");
  extract->add_flag("--no-nms{0}", apply_nms, "disable non-maximum suppression");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate detector/descriptor pairs from a manifest");
  std::string manifest, eval_ckpt, features_dir, eval_config, report_json, report_text, viz_dir;
  eval->add_option("--manifest", manifest, "pair manifest file")->required();
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint to evaluate");
  eval->add_option("--features", features_dir, "directory of extracted .kpts files");
  eval->add_option("--config", eval_config, "eval config JSON");
  eval->add_option("--report", report_json, "machine-readable report path")->required();
  eval->add_option("--report-text", report_text, "human-readable report path (stdout if omitted)");
  eval->add_option("--viz", viz_dir, "write match visualizations here");

  // match
  auto* match = app.add_subcommand("match", "match two keypoint files by descriptors");
  std::string kpts_a, kpts_b, match_out, homography;
  double theta_desc = 0.8, theta_dist = 4.0;
  match->add_option("a", kpts_a, "first keypoint file")->required();
  match->add_option("b", kpts_b, "second keypoint file")->required();
  match->add_option("--out", match_out, "match file to write")->required();
  match->add_option("--homography", homography, "ground-truth homography for geometric checks");
  match->add_option("--theta-desc", theta_desc, "similarity acceptance threshold");
  match->add_option("--theta-dist", theta_dist, "geometric acceptance threshold in px");

  // inspect-checkpoint
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata");
  std::string inspect_path;
  inspect->add_option("checkpoint", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : int(GP_ERROR_USAGE);
  }

  if (train->parsed())
    return finish(gp_train(opt(train_config), corpus_dir.c_str(), train_out.c_str(), opt(resume),
                           seed_override, max_steps));
  if (extract->parsed()) {
    std::vector<const char*> paths;
    for (const auto& s : images) paths.push_back(s.c_str());
    return finish(gp_extract(ckpt.c_str(), paths.data(), paths.size(), extract_out.c_str(),
                             theta_keypoint, nms_radius, apply_nms));
  }
  if (eval->parsed())
    return finish(gp_eval(manifest.c_str(), opt(eval_ckpt), opt(features_dir), opt(eval_config),
                          report_json.c_str(), opt(report_text), opt(viz_dir)));
  if (match->parsed())
    return finish(gp_match(kpts_a.c_str(), kpts_b.c_str(), match_out.c_str(), opt(homography),
                           theta_desc, theta_dist));
  if (inspect->parsed()) {
    std::vector<char> buf(1 << 16);
    const gp_status status = gp_checkpoint_inspect(inspect_path.c_str(), buf.data(), buf.size());
    if (status == GP_OK) std::fputs(buf.data(), stdout);
    return finish(status);
  }
  return int(GP_ERROR_USAGE);
}
