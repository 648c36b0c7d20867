#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "xvmunet/network.hpp"
#include "xvmunet/synthetic.hpp"
#include "xvmunet/train.hpp"

namespace xvmunet::config {

// Everything a CLI run needs. Keys are grouped by prefix: model.*, train.*, data.*.
struct RunConfig {
  net::ModelConfig model;
  train::TrainConfig train;
  data::SyntheticSpec data;
};

// "key = value" per line, '#' starts a comment, blank lines ignored.
// ConfigError on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_key_values(std::string_view text);

// Overrides fields named in text; unknown keys and unparsable values raise ConfigError.
void apply_text(RunConfig& cfg, std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Full resolved listing, one key per line in a fixed order; parses back to the same config.
std::string to_text(const RunConfig& cfg);
// Only the model.* keys; this is what checkpoints embed.
std::string model_text(const net::ModelConfig& model);
// Accepts model.* keys only.
net::ModelConfig parse_model_text(std::string_view text);

// 16 hex digits identifying the architecture.
std::string config_hash(const net::ModelConfig& model);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace xvmunet::config
