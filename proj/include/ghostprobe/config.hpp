#pragma once

#include <filesystem>
#include <string>

#include "ghostprobe/train.hpp"
#include "json.hpp"

namespace ghostprobe {

// Everything a run needs, as one JSON document. Every section is optional and
// falls back to the desk defaults; unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
  int scene_width = 128;
  int scene_height = 128;
  PostprocessOptions post;
  double iou_threshold = 0.5;
  std::string data_path;
  std::string out_path;
};

RunConfig default_run_config();

// Throws SpecError with the offending key path.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

// Hex FNV-1a of the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);

nlohmann::json report_json(const EvalReport& r);

}  // namespace ghostprobe
