#pragma once

// Run configuration as flat `key = value` text.
//
//   # comment
//   env.kind = key-chain
//   train.lr = 0.5
//
// Keys are dot paths (env.*, reward.*, train.*, aem.*). Unknown keys and
// malformed values raise ConfigError naming the key; range checks are left
// to TrainConfig::validate().

#include <map>
#include <string>
#include <vector>

#include "aemlab/trainer.hpp"

namespace aemlab {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string emit_key_values(const KeyValues& kv);

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Applies every key of `kv` on top of `base`.
TrainConfig train_config_from_key_values(const KeyValues& kv, TrainConfig base = {});
KeyValues train_config_to_key_values(const TrainConfig& config);

// "key=value" command-line override.
void apply_override(TrainConfig& config, const std::string& assignment);

TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& config, const std::string& path);

std::vector<std::string> config_keys();

}  // namespace aemlab
