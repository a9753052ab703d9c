#pragma once

#include <string>

#include "goodpoint/eval.hpp"
#include "goodpoint/train.hpp"

namespace goodpoint {

// Human-readable key/value tree (JSON). Unknown keys and out-of-range values
// raise usage errors naming the offending key.

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);  // empty path = defaults

std::string eval_config_to_json(const EvalConfig& cfg);
EvalConfig eval_config_from_json(const std::string& text);
EvalConfig load_eval_config(const std::string& path);

}  // namespace goodpoint
