#include "msnet/config.hpp"

#include <fstream>

#include "msnet/common.hpp"

using nlohmann::json;

namespace msnet {
namespace {

json data_config_to_json(const DataConfig& cfg) {
  return {{"canvas_h", cfg.spec.canvas_h},
          {"canvas_w", cfg.spec.canvas_w},
          {"sprites_per_clip", cfg.spec.sprites_per_clip},
          {"speed_set", cfg.spec.speed_set},
          {"frames_per_clip", cfg.spec.frames_per_clip},
          {"bounce_free", cfg.spec.bounce_free},
          {"num_clips", cfg.num_clips},
          {"num_test", cfg.num_test},
          {"seed", cfg.seed}};
}

DataConfig data_config_from_json(const json& j) {
  DataConfig cfg;
  cfg.spec.canvas_h = j.at("canvas_h").get<int>();
  cfg.spec.canvas_w = j.at("canvas_w").get<int>();
  cfg.spec.sprites_per_clip = j.at("sprites_per_clip").get<int>();
  cfg.spec.speed_set = j.at("speed_set").get<std::vector<int>>();
  cfg.spec.frames_per_clip = j.at("frames_per_clip").get<int>();
  cfg.spec.bounce_free = j.at("bounce_free").get<bool>();
  cfg.num_clips = j.at("num_clips").get<int>();
  cfg.num_test = j.at("num_test").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json eval_config_to_json(const EvalConfig& cfg) {
  return {{"k", cfg.k}, {"t_out", cfg.t_out}, {"top", cfg.top}};
}

EvalConfig eval_config_from_json(const json& j) {
  EvalConfig cfg;
  cfg.k = j.at("k").get<int>();
  cfg.t_out = j.at("t_out").get<int>();
  cfg.top = j.at("top").get<int>();
  return cfg;
}

// Overwrites base values with patch values, recursing into objects. Every
// patch key must already exist in the base with a structurally compatible
// value.
void strict_merge(json& base, const json& patch, const std::string& path) {
  for (const auto& [key, value] : patch.items()) {
    std::string where = path.empty() ? key : path + "." + key;
    require(base.contains(key), Errc::invalid_config, "config: unknown key " + where);
    json& slot = base.at(key);
    if (slot.is_object() && value.is_object()) {
      strict_merge(slot, value, where);
    } else if (slot.is_object() != value.is_object()) {
      fail(Errc::invalid_config, "config: type mismatch at " + where);
    } else {
      slot = value;
    }
  }
}

// Values arrive as raw CLI text: parse as JSON when possible so numbers and
// booleans keep their types, else keep the text as a string.
json parse_override_value(const std::string& text) {
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) return json(text);
  return parsed;
}

void apply_override(json& base, const std::string& dotted, const std::string& value) {
  json* slot = &base;
  std::string remaining = dotted;
  std::string where;
  while (true) {
    std::size_t dot = remaining.find('.');
    std::string key = remaining.substr(0, dot);
    where = where.empty() ? key : where + "." + key;
    require(slot->is_object() && slot->contains(key), Errc::invalid_config, "config: unknown key " + where);
    slot = &slot->at(key);
    if (dot == std::string::npos) break;
    remaining = remaining.substr(dot + 1);
  }
  require(!slot->is_object(), Errc::invalid_config, "config: cannot override the whole section " + where);
  *slot = parse_override_value(value);
}

}  // namespace

void DataConfig::validate() const {
  spec.validate();
  require(num_clips >= 1, Errc::invalid_config, "data.num_clips must be at least 1");
  require(num_test >= 0 && num_test <= num_clips, Errc::invalid_config,
          "data.num_test must lie in [0, num_clips]");
}

void EvalConfig::validate() const {
  require(k >= 2, Errc::invalid_config, "eval.k must be at least 2");
  require(t_out >= 1, Errc::invalid_config, "eval.t_out must be at least 1");
  require(top >= 1, Errc::invalid_config, "eval.top must be at least 1");
}

void RunConfig::validate() const {
  data.validate();
  network.validate();
  train.validate();
  eval.validate();
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name == "mnist64") {
    cfg.network.image_shape = {1, 64, 64};
    cfg.network.num_blocks = 4;
    cfg.network.base_channels = 32;
    cfg.network.motion_channels = 4;
    cfg.network.content_channels = 8;
    cfg.network.clstm_layers = 2;
    cfg.network.clstm_hidden = 32;
    cfg.train.weights.alpha = 1.0;
    cfg.train.weights.beta = 3.3e-5;
    cfg.train.k_max = 5;
    cfg.train.steps = 50000;
    cfg.data.spec.canvas_h = 64;
    cfg.data.spec.canvas_w = 64;
  } else if (name == "kth128") {
    cfg.network.image_shape = {1, 128, 128};
    cfg.network.num_blocks = 4;
    cfg.network.base_channels = 32;
    cfg.network.motion_channels = 8;
    cfg.network.content_channels = 8;
    cfg.network.clstm_layers = 2;
    cfg.network.clstm_hidden = 32;
    cfg.train.weights.alpha = 1.0;
    cfg.train.weights.beta = 4e-5;
    cfg.train.k_max = 10;
    cfg.train.steps = 100000;
    cfg.data.spec.canvas_h = 128;
    cfg.data.spec.canvas_w = 128;
    cfg.eval.t_out = 20;
  } else if (name == "desk") {
    cfg.network.image_shape = {1, 32, 32};
    cfg.network.num_blocks = 3;
    cfg.network.base_channels = 16;
    cfg.network.motion_channels = 4;
    cfg.network.content_channels = 8;
    cfg.network.clstm_layers = 2;
    cfg.network.clstm_hidden = 32;
    cfg.train.weights.alpha = 1.0;
    cfg.train.weights.beta = 4e-5;
    cfg.train.k_max = 5;
    cfg.train.steps = 4000;
    cfg.train.batch_size = 16;
    cfg.train.lr = 3e-4;
    cfg.data.spec.sprites_per_clip = 1;
    cfg.data.spec.speed_set = {-1, 1};
    cfg.data.spec.bounce_free = true;
  } else {
    fail(Errc::invalid_config, "unknown preset: " + name + " (expected mnist64, kth128, or desk)");
  }
  cfg.train.k = 10;
  cfg.train.T = 20;
  cfg.data.spec.frames_per_clip = 20;
  cfg.validate();
  return cfg;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["preset"] = cfg.preset;
  j["data"] = data_config_to_json(cfg.data);
  j["network"] = network_config_to_json(cfg.network);
  j["train"] = train_config_to_json(cfg.train);
  j["eval"] = eval_config_to_json(cfg.eval);
  return j;
}

RunConfig merge_config(const json& file, const std::map<std::string, std::string>& overrides) {
  require(file.is_object() || file.is_null(), Errc::invalid_config, "config file must hold a JSON object");

  std::string preset = "desk";
  if (file.is_object() && file.contains("preset")) {
    require(file.at("preset").is_string(), Errc::invalid_config, "config: preset must be a string");
    preset = file.at("preset").get<std::string>();
  }
  if (auto it = overrides.find("preset"); it != overrides.end()) preset = it->second;

  json doc = run_config_to_json(preset_config(preset));
  try {
    if (file.is_object()) {
      json patch = file;
      patch.erase("preset");
      strict_merge(doc, patch, "");
    }
    for (const auto& [path, value] : overrides) {
      if (path == "preset") continue;
      apply_override(doc, path, value);
    }

    RunConfig cfg;
    cfg.preset = preset;
    cfg.data = data_config_from_json(doc.at("data"));
    cfg.network = network_config_from_json(doc.at("network"));
    cfg.train = train_config_from_json(doc.at("train"));
    cfg.eval = eval_config_from_json(doc.at("eval"));
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    fail(Errc::invalid_config, std::string("config: ") + e.what());
  }
}

RunConfig parse_config(const std::string& path, const std::map<std::string, std::string>& overrides) {
  if (path.empty()) return merge_config(json(nullptr), overrides);
  std::ifstream in(path);
  require(in.good(), Errc::invalid_config, "cannot open config file: " + path);
  json file = json::parse(in, nullptr, false);
  require(!file.is_discarded(), Errc::invalid_config, "config file is not valid JSON: " + path);
  return merge_config(file, overrides);
}

}  // namespace msnet
