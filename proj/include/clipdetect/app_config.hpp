#pragma once

// Application settings: a `key = value` text file (# comments, unknown keys
// rejected) with command-line flags applied on top.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "clipdetect/encoder.hpp"
#include "clipdetect/llm_baseline.hpp"
#include "clipdetect/trainer.hpp"

namespace clipdetect {

struct AppConfig {
  std::filesystem::path model_path;
  bool normalize = true;
  PreprocessSpec preprocess;
  std::size_t embed_workers = 0;
  TrainConfig train;
  double fewshot_fraction = 0.2;
  bool stratified = true;
  LlmClientConfig llm;
  std::filesystem::path out_dir = "out";
};

/// Every key accepted by the config file.
const std::vector<std::string>& config_keys();

/// Applies one setting; throws ConfigError on unknown keys or bad values.
void apply_setting(AppConfig& config, std::string_view key, std::string_view value);

/// Parses config text. Relative paths resolve against `base_dir`.
AppConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

/// Renders every setting in config-file syntax.
std::string render_config(const AppConfig& config);

}  // namespace clipdetect
