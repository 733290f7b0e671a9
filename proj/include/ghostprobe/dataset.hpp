#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ghostprobe/synth.hpp"

namespace ghostprobe {

// On-disk layout:
//   <dir>/index.json               {"ids": [...], "base_seed": S, "split_key": "fnv1a64(id)"}
//   <dir>/annotations.json         {id: [[x_min, y_min, x_max, y_max], ...]}
//   <dir>/<id>/depth.pfm, image.ppm, intrinsics.json
struct DatasetIndex {
  std::vector<std::string> ids;
  std::uint64_t base_seed = 0;
};

void write_sample_files(const std::filesystem::path& dir, const Sample& sample);
void write_index(const std::filesystem::path& dir, const DatasetIndex& index);
void write_annotations(const std::filesystem::path& dir, const std::vector<Annotation>& anns);

DatasetIndex read_index(const std::filesystem::path& dir);
std::map<std::string, Annotation> read_annotations(const std::filesystem::path& dir);

// Loads one sample directory; the annotation is left empty.
DepthFrame read_frame(const std::filesystem::path& sample_dir, const std::string& id);

struct Dataset {
  std::vector<Sample> samples;  // index order
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ghostprobe
