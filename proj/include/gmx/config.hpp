#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmx/dataio.hpp"
#include "gmx/model.hpp"
#include "gmx/trainer.hpp"

namespace gmx {

/// Everything a command needs, assembled from a `key=value` file plus
/// `--set key=value` overrides. Paths are absolute once loaded.
struct RunConfig {
  ShapesConfig shapes;
  std::size_t val_count = 128;
  double labeled_fraction = 0.1;
  TrainConfig train;
  ModelConfig model;
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "runs/default";
  std::size_t ablate_seeds = 3;

  std::filesystem::path manifest_path() const { return data_dir / "manifest.tsv"; }
  void validate() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses flat `key=value` lines; `#` starts a comment. Throws InvalidConfig
/// with the line number on malformed input.
KeyValues parse_key_values(const std::string& text, const std::string& origin);

/// Applies settings in order. Unknown keys and unparsable values throw
/// InvalidConfig.
void apply_settings(RunConfig& config, const KeyValues& settings);

/// Reads the optional config file, applies overrides, resolves paths
/// against the working directory and validates.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

/// Canonical `key=value` dump of every setting.
std::string format_run_config(const RunConfig& config);

std::vector<std::string> known_config_keys();

}  // namespace gmx
