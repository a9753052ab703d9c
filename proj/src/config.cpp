#include "goodpoint/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace goodpoint {

namespace {

using json = nlohmann::ordered_json;

json range_to_json(const Range& r) { return json::array({r.lo, r.hi}); }

json train_defaults(const TrainConfig& c) {
  return json{
      {"seed", c.seed},
      {"batch_size", c.batch_size},
      {"crop_size", c.crop_size},
      {"epochs_constant", c.epochs_constant},
      {"epochs_decay", c.epochs_decay},
      {"decay_factor_per_epoch", c.decay_factor_per_epoch},
      {"steps_per_epoch", c.steps_per_epoch},
      {"max_steps", c.max_steps},
      {"workers", c.workers},
      {"log_every", c.log_every},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"weight_decay", c.optimizer.weight_decay},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon}}},
      {"loss",
       {{"lambda_descriptor", c.loss_weights.lambda_descriptor},
        {"lambda_detector", c.loss_weights.lambda_detector},
        {"lambda_heatmap", c.loss_weights.lambda_heatmap},
        {"theta_dist", c.theta_dist},
        {"n_random_shuffles", c.n_random_shuffles},
        {"wrong_match_min_dist", c.wrong_match_min_dist},
        {"descriptor_gt_accepted_only", c.descriptor_gt_accepted_only}}},
      {"homography",
       {{"max_shift_px", c.homography.max_shift_px},
        {"max_perspective_px", c.homography.max_perspective_px},
        {"max_rotation_rad", c.homography.max_rotation_rad},
        {"warp_both", c.warp_both},
        {"warp_both_split", c.warp_both_split}}},
      {"noise",
       {{"skip_probability", c.noise.skip_probability},
        {"variance_guard_ratio", c.noise.variance_guard_ratio},
        {"gaussian_sigma", range_to_json(c.noise.gaussian_sigma)},
        {"brightness_delta", range_to_json(c.noise.brightness_delta)},
        {"shade_strength", range_to_json(c.noise.shade_strength)},
        {"salt_pepper_fraction", range_to_json(c.noise.salt_pepper_fraction)},
        {"motion_blur_lengths", c.noise.motion_blur_lengths},
        {"contrast_range", range_to_json(c.noise.contrast_range)}}},
      {"blur", {{"kernel_size", c.blur.kernel_size}, {"sigma", c.blur.sigma}}},
      {"extraction",
       {{"train_window_src", c.extraction.train_window_src},
        {"train_window_warp", c.extraction.train_window_warp},
        {"inference_threshold", c.extraction.inference_threshold},
        {"nms_radius", c.extraction.nms_radius},
        {"apply_nms", c.extraction.apply_nms}}},
      {"validation",
       {{"holdout_fraction", c.validation.holdout_fraction},
        {"eps_px", c.validation.eps_px},
        {"theta_desc", c.validation.theta_desc},
        {"theta_keypoint", c.validation.theta_keypoint},
        {"nms_radius", c.validation.nms_radius}}},
  };
}

// Recursively checks user keys against the default tree.
void check_unknown_keys(const json& defaults, const json& user, const std::string& prefix) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) raise_usage("unknown config key: " + path);
    if (defaults[key].is_object()) {
      if (!value.is_object()) raise_usage("config key " + path + " must be an object");
      check_unknown_keys(defaults[key], value, path);
    }
  }
}

template <class T>
void read_field(const json& j, const std::string& key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    raise_usage("config key " + (prefix.empty() ? key : prefix + "." + key) + " has a bad value");
  }
}

void read_range(const json& j, const std::string& key, Range& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    raise_usage("config key " + prefix + "." + key + " must be [lo, hi]");
  out.lo = v[0].get<double>();
  out.hi = v[1].get<double>();
  if (out.hi < out.lo) raise_usage("config key " + prefix + "." + key + " has hi < lo");
}

void check(bool ok, const std::string& key, const std::string& why) {
  if (!ok) raise_usage("config key " + key + " " + why);
}

TrainConfig parse_train(const json& user) {
  TrainConfig c;
  check_unknown_keys(train_defaults(c), user, "");
  read_field(user, "seed", c.seed, "");
  read_field(user, "batch_size", c.batch_size, "");
  read_field(user, "crop_size", c.crop_size, "");
  read_field(user, "epochs_constant", c.epochs_constant, "");
  read_field(user, "epochs_decay", c.epochs_decay, "");
  read_field(user, "decay_factor_per_epoch", c.decay_factor_per_epoch, "");
  read_field(user, "steps_per_epoch", c.steps_per_epoch, "");
  read_field(user, "max_steps", c.max_steps, "");
  read_field(user, "workers", c.workers, "");
  read_field(user, "log_every", c.log_every, "");
  if (user.contains("optimizer")) {
    const auto& o = user.at("optimizer");
    read_field(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
    read_field(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
    read_field(o, "beta1", c.optimizer.beta1, "optimizer");
    read_field(o, "beta2", c.optimizer.beta2, "optimizer");
    read_field(o, "epsilon", c.optimizer.epsilon, "optimizer");
  }
  if (user.contains("loss")) {
    const auto& o = user.at("loss");
    read_field(o, "lambda_descriptor", c.loss_weights.lambda_descriptor, "loss");
    read_field(o, "lambda_detector", c.loss_weights.lambda_detector, "loss");
    read_field(o, "lambda_heatmap", c.loss_weights.lambda_heatmap, "loss");
    read_field(o, "theta_dist", c.theta_dist, "loss");
    read_field(o, "n_random_shuffles", c.n_random_shuffles, "loss");
    read_field(o, "wrong_match_min_dist", c.wrong_match_min_dist, "loss");
    read_field(o, "descriptor_gt_accepted_only", c.descriptor_gt_accepted_only, "loss");
  }
  if (user.contains("homography")) {
    const auto& o = user.at("homography");
    read_field(o, "max_shift_px", c.homography.max_shift_px, "homography");
    read_field(o, "max_perspective_px", c.homography.max_perspective_px, "homography");
    read_field(o, "max_rotation_rad", c.homography.max_rotation_rad, "homography");
    read_field(o, "warp_both", c.warp_both, "homography");
    read_field(o, "warp_both_split", c.warp_both_split, "homography");
  }
  if (user.contains("noise")) {
    const auto& o = user.at("noise");
    read_field(o, "skip_probability", c.noise.skip_probability, "noise");
    read_field(o, "variance_guard_ratio", c.noise.variance_guard_ratio, "noise");
    read_range(o, "gaussian_sigma", c.noise.gaussian_sigma, "noise");
    read_range(o, "brightness_delta", c.noise.brightness_delta, "noise");
    read_range(o, "shade_strength", c.noise.shade_strength, "noise");
    read_range(o, "salt_pepper_fraction", c.noise.salt_pepper_fraction, "noise");
    read_field(o, "motion_blur_lengths", c.noise.motion_blur_lengths, "noise");
    read_range(o, "contrast_range", c.noise.contrast_range, "noise");
  }
  if (user.contains("blur")) {
    const auto& o = user.at("blur");
    read_field(o, "kernel_size", c.blur.kernel_size, "blur");
    read_field(o, "sigma", c.blur.sigma, "blur");
  }
  if (user.contains("extraction")) {
    const auto& o = user.at("extraction");
    read_field(o, "train_window_src", c.extraction.train_window_src, "extraction");
    read_field(o, "train_window_warp", c.extraction.train_window_warp, "extraction");
    read_field(o, "inference_threshold", c.extraction.inference_threshold, "extraction");
    read_field(o, "nms_radius", c.extraction.nms_radius, "extraction");
    read_field(o, "apply_nms", c.extraction.apply_nms, "extraction");
  }
  if (user.contains("validation")) {
    const auto& o = user.at("validation");
    read_field(o, "holdout_fraction", c.validation.holdout_fraction, "validation");
    read_field(o, "eps_px", c.validation.eps_px, "validation");
    read_field(o, "theta_desc", c.validation.theta_desc, "validation");
    read_field(o, "theta_keypoint", c.validation.theta_keypoint, "validation");
    read_field(o, "nms_radius", c.validation.nms_radius, "validation");
  }

  check(c.batch_size >= 1, "batch_size", "must be >= 1");
  check(c.crop_size >= kCellSize && c.crop_size % kCellSize == 0, "crop_size",
        "must be a positive multiple of " + std::to_string(kCellSize));
  check(c.epochs_constant >= 0, "epochs_constant", "must be >= 0");
  check(c.epochs_decay >= 0, "epochs_decay", "must be >= 0");
  check(c.epochs_constant + c.epochs_decay >= 1, "epochs_constant", "schedule needs >= 1 epoch");
  check(c.decay_factor_per_epoch > 0, "decay_factor_per_epoch", "must be positive");
  check(c.steps_per_epoch >= 0, "steps_per_epoch", "must be >= 0");
  check(c.max_steps >= 0, "max_steps", "must be >= 0");
  check(c.workers >= 1, "workers", "must be >= 1");
  check(c.optimizer.learning_rate > 0, "optimizer.learning_rate", "must be positive");
  check(c.optimizer.weight_decay >= 0, "optimizer.weight_decay", "must be >= 0");
  check(c.optimizer.beta1 >= 0 && c.optimizer.beta1 < 1, "optimizer.beta1", "must be in [0,1)");
  check(c.optimizer.beta2 >= 0 && c.optimizer.beta2 < 1, "optimizer.beta2", "must be in [0,1)");
  check(c.optimizer.epsilon > 0, "optimizer.epsilon", "must be positive");
  check(c.loss_weights.lambda_descriptor >= 0, "loss.lambda_descriptor", "must be >= 0");
  check(c.loss_weights.lambda_detector >= 0, "loss.lambda_detector", "must be >= 0");
  check(c.loss_weights.lambda_heatmap >= 0, "loss.lambda_heatmap", "must be >= 0");
  check(c.theta_dist > 0, "loss.theta_dist", "must be positive");
  check(c.n_random_shuffles >= 0, "loss.n_random_shuffles", "must be >= 0");
  check(c.homography.max_shift_px >= 0, "homography.max_shift_px", "must be >= 0");
  check(c.homography.max_perspective_px >= 0, "homography.max_perspective_px", "must be >= 0");
  check(c.homography.max_rotation_rad >= 0, "homography.max_rotation_rad", "must be >= 0");
  check(c.warp_both_split >= 0 && c.warp_both_split <= 1, "homography.warp_both_split",
        "must be in [0,1]");
  check(c.noise.skip_probability >= 0 && c.noise.skip_probability <= 1, "noise.skip_probability",
        "must be in [0,1]");
  check(c.noise.variance_guard_ratio > 0 && c.noise.variance_guard_ratio < 1,
        "noise.variance_guard_ratio", "must be in (0,1)");
  check(c.noise.gaussian_sigma.lo >= 0, "noise.gaussian_sigma", "must be nonnegative");
  check(c.noise.shade_strength.lo >= 0 && c.noise.shade_strength.hi <= 1, "noise.shade_strength",
        "must stay in [0,1]");
  check(c.noise.salt_pepper_fraction.lo >= 0 && c.noise.salt_pepper_fraction.hi <= 1,
        "noise.salt_pepper_fraction", "must stay in [0,1]");
  for (int len : c.noise.motion_blur_lengths)
    check(len >= 1 && len % 2 == 1, "noise.motion_blur_lengths", "entries must be odd and >= 1");
  check(c.blur.kernel_size >= 1 && c.blur.kernel_size % 2 == 1, "blur.kernel_size",
        "must be odd and >= 1");
  check(c.blur.sigma > 0, "blur.sigma", "must be positive");
  check(c.extraction.train_window_src >= 1, "extraction.train_window_src", "must be >= 1");
  check(c.extraction.train_window_warp >= 1, "extraction.train_window_warp", "must be >= 1");
  check(c.extraction.inference_threshold > 0 && c.extraction.inference_threshold < 1,
        "extraction.inference_threshold", "must be in (0,1)");
  check(c.extraction.nms_radius >= 0, "extraction.nms_radius", "must be >= 0");
  check(c.validation.holdout_fraction >= 0 && c.validation.holdout_fraction < 1,
        "validation.holdout_fraction", "must be in [0,1)");
  check(c.validation.eps_px > 0, "validation.eps_px", "must be positive");
  check(c.validation.theta_desc >= 0 && c.validation.theta_desc <= 1, "validation.theta_desc",
        "must be in [0,1]");
  return c;
}

json eval_defaults(const EvalConfig& c) {
  return json{{"eps_px", c.eps_px},
              {"coverage_radius_px", c.coverage_radius_px},
              {"theta_keypoint", c.theta_keypoint},
              {"theta_desc", c.theta_desc},
              {"nms_radius", c.nms_radius},
              {"apply_nms", c.apply_nms},
              {"max_keypoints", c.max_keypoints}};
}

EvalConfig parse_eval(const json& user) {
  EvalConfig c;
  check_unknown_keys(eval_defaults(c), user, "");
  read_field(user, "eps_px", c.eps_px, "");
  read_field(user, "coverage_radius_px", c.coverage_radius_px, "");
  read_field(user, "theta_keypoint", c.theta_keypoint, "");
  read_field(user, "theta_desc", c.theta_desc, "");
  read_field(user, "nms_radius", c.nms_radius, "");
  read_field(user, "apply_nms", c.apply_nms, "");
  read_field(user, "max_keypoints", c.max_keypoints, "");
  check(!c.eps_px.empty(), "eps_px", "needs at least one threshold");
  for (double e : c.eps_px) check(e > 0, "eps_px", "thresholds must be positive");
  check(c.coverage_radius_px > 0, "coverage_radius_px", "must be positive");
  check(c.theta_keypoint > 0 && c.theta_keypoint < 1, "theta_keypoint", "must be in (0,1)");
  check(c.theta_desc >= 0 && c.theta_desc <= 1, "theta_desc", "must be in [0,1]");
  check(c.max_keypoints >= 0, "max_keypoints", "must be >= 0");
  return c;
}

json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    raise_usage("malformed " + what + ": " + e.what());
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise_usage("cannot open config: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  return train_defaults(cfg).dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  return parse_train(parse_text(text, "train config"));
}

TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return train_config_from_json(slurp(path));
}

std::string eval_config_to_json(const EvalConfig& cfg) { return eval_defaults(cfg).dump(2) + "\n"; }

EvalConfig eval_config_from_json(const std::string& text) {
  return parse_eval(parse_text(text, "eval config"));
}

EvalConfig load_eval_config(const std::string& path) {
  if (path.empty()) return EvalConfig{};
  return eval_config_from_json(slurp(path));
}

}  // namespace goodpoint
