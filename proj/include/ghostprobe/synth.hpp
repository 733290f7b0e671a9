#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ghostprobe/detection.hpp"
#include "ghostprobe/geometry.hpp"

namespace ghostprobe {

// Vertical slab standing on the ground plane, camera frame, meters.
struct Occluder {
  double lateral = 0.0;  // X of the slab center
  double width = 2.0;
  double height = 2.0;
  double depth = 10.0;
  std::array<double, 3> color{0.6, 0.1, 0.1};
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int width = 128;
  int height = 128;
  // Depth of the ground at the bottom row (near) and at the horizon (far);
  // everything above the horizon sits at far.
  double near_depth = 4.0;
  double far_depth = 20.0;
  std::vector<Occluder> occluders;
  double noise_std = 0.02;
  // Pedestrian emergence zone in meters.
  double zone_width = 1.5;
  double zone_height = 1.8;

  CameraIntrinsics intrinsics() const;
  void validate() const;
};

struct Sample {
  DepthFrame frame;
  Annotation annotation;
};

// Pixel footprint of an occluder: columns [left, right), rows [top, bottom).
struct SlabFootprint {
  double left = 0, right = 0, top = 0, bottom = 0;
};

// Row where the ground ramp reaches depth d.
double ground_row(const SceneSpec& spec, double d);
double ground_depth(const SceneSpec& spec, double row);
SlabFootprint footprint(const SceneSpec& spec, const Occluder& occ);

// Emergence zone next to the occluder edge that faces the image center, at
// ground level, clipped to the frame. Empty box when nothing is left after clipping.
Box ghost_zone(const SceneSpec& spec, const Occluder& occ);

Sample generate(const SceneSpec& spec, const std::string& sample_id = "scene");

// Randomized scene with 0 to 2 non-overlapping occluders.
SceneSpec random_scene_spec(std::uint64_t seed, int width = 128, int height = 128);

std::string sample_name(std::size_t index);

// Writes n samples under dir (see README for the layout). Refuses a non-empty
// directory unless force is set. Returns the ids written.
std::vector<std::string> generate_dataset(const std::filesystem::path& dir, std::size_t n,
                                          std::uint64_t base_seed, bool force = false,
                                          int width = 128, int height = 128);

// FNV-1a over the dataset files in a fixed order.
std::uint64_t dataset_checksum(const std::filesystem::path& dir);

}  // namespace ghostprobe
