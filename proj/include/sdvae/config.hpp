#pragma once

// Flat `key = value` run configuration. Lines starting with '#' are comments.
// Every TrainingConfig field has a key; see `config_keys()` and the table in
// README.md. Unknown keys and malformed values raise ConfigError naming the key.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sdvae/trainer.hpp"

namespace sdvae {

// Applies one key to `config`.
void set_config_value(TrainingConfig& config, std::string_view key, std::string_view value);

// Parses text on top of `base` (defaults when omitted).
TrainingConfig parse_config(std::string_view text, TrainingConfig base = {});
TrainingConfig load_config(const std::filesystem::path& path, TrainingConfig base = {});

// Every key, in a fixed order, with its current value. Parsing this text
// reproduces `config` exactly (doubles are written round-trip exact).
std::string config_to_text(const TrainingConfig& config);

const std::vector<std::string>& config_keys();

}  // namespace sdvae
