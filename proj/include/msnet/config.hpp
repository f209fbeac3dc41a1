#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "msnet/dataset.hpp"
#include "msnet/networks.hpp"
#include "msnet/training.hpp"

namespace msnet {

/// Synthetic dataset generation settings. The glyph set is always the
/// built-in one; everything else mirrors SpriteSpec.
struct DataConfig {
  SpriteSpec spec;
  int num_clips = 500;
  int num_test = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Protocol settings for prediction-time subcommands.
struct EvalConfig {
  int k = 10;     // given frames
  int t_out = 10; // prediction horizon
  int top = 10;   // retrieval depth

  void validate() const;
};

/// The complete effective configuration of one run.
struct RunConfig {
  std::string preset = "desk";
  DataConfig data;
  NetworkConfig network;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
};

/// Built-in presets: "mnist64" (64x64, motion 4x4x4 / content 8x4x4 feature
/// shapes), "kth128" (128x128, 8x8x8 features), and "desk" (32x32, small
/// and fast enough for unaccelerated end-to-end runs).
RunConfig preset_config(const std::string& name);

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);

/// Merges a config document over preset defaults, then applies overrides
/// (dotted "section.key" paths mapped to JSON-encoded values), strictly:
/// unknown keys, type mismatches, and failed invariants all throw with the
/// offending key path in the message. The preset is chosen by the overrides'
/// "preset" entry, else the document's, else "desk".
RunConfig merge_config(const nlohmann::json& file, const std::map<std::string, std::string>& overrides);

/// merge_config over a JSON file on disk. An empty path means no file.
RunConfig parse_config(const std::string& path, const std::map<std::string, std::string>& overrides);

}  // namespace msnet
