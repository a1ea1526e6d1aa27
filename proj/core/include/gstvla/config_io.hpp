#pragma once

#include <filesystem>
#include <string>

#include "gstvla/trainer.hpp"

namespace gstvla {

/// JSON form of a full training configuration. Every field is written, so
/// the text alone reproduces a run.
std::string config_to_json(const TrainConfig& cfg);

/// Parses a (possibly partial) JSON configuration on top of the defaults.
/// Unknown keys and malformed values are rejected with the offending key path.
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// Reads a JSON ablation grid: {"cells": [{"name": ..., "flags": {...}}, ...]}
/// with an optional "base" configuration object.
struct AblationGrid {
  TrainConfig base;
  std::vector<AblationCell> cells;
};
AblationGrid load_ablation_grid(const std::filesystem::path& path);

}  // namespace gstvla
