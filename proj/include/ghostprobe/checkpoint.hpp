#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ghostprobe/layers.hpp"

namespace ghostprobe {

// Binary parameter container:
//   "DPGP1"
//   repeated until EOF:
//     u32 name length, UTF-8 name bytes,
//     u32 rank, rank x u64 extents,
//     numel x f32 values
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[] = "DPGP1";

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

std::vector<CheckpointRecord> snapshot(const ParameterList<float>& params);

// Copies values into params by name; every parameter must be present with a matching shape.
void restore(ParameterList<float>& params, const std::vector<CheckpointRecord>& records);

inline void save_parameters(const std::filesystem::path& path, const ParameterList<float>& params) {
  write_checkpoint(path, snapshot(params));
}

inline void load_parameters(const std::filesystem::path& path, ParameterList<float>& params) {
  restore(params, read_checkpoint(path));
}

}  // namespace ghostprobe
