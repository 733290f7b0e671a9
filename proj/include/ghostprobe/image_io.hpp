#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ghostprobe/geometry.hpp"

namespace ghostprobe {

struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, top row first
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // row-major interleaved RGB, top row first
};

// Grayscale PFM ("Pf"), little-endian (scale -1.0). Rows are stored bottom-up
// on disk as the format requires.
void write_pfm(const std::filesystem::path& path, const FloatImage& image);
FloatImage read_pfm(const std::filesystem::path& path);

// Binary PPM (P6), maxval 255.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

// {fx, fy, cx, cy, width, height}
void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k);
CameraIntrinsics read_intrinsics(const std::filesystem::path& path);

// Quantizes [0,1] floats to 8 bits with rounding.
RgbImage to_rgb8(const std::vector<float>& rgb, int width, int height);
std::vector<float> from_rgb8(const RgbImage& image);

}  // namespace ghostprobe
