#include "ghostprobe/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"

namespace ghostprobe {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string token;
  char c = 0;
  while (is.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(is, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

int parse_extent(const std::string& token, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size() || v <= 0) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("bad ") + what + " in image header: '" + token + "'");
  }
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const FloatImage& image) {
  if (image.values.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw DimensionError("write_pfm: buffer does not match extents");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << "Pf\n" << image.width << ' ' << image.height << "\n-1.0\n";
  for (int v = image.height - 1; v >= 0; --v) {
    for (int u = 0; u < image.width; ++u) {
      const auto bits = std::bit_cast<std::uint32_t>(image.values[static_cast<std::size_t>(v * image.width + u)]);
      const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                             static_cast<char>((bits >> 16) & 0xFF),
                             static_cast<char>((bits >> 24) & 0xFF)};
      os.write(bytes, 4);
    }
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

FloatImage read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  if (header_token(is) != "Pf") throw FormatError("not a grayscale PFM: " + path.string());
  FloatImage image;
  image.width = parse_extent(header_token(is), "width");
  image.height = parse_extent(header_token(is), "height");
  const std::string scale_token = header_token(is);
  double scale = 0.0;
  try {
    scale = std::stod(scale_token);
  } catch (const std::exception&) {
    throw FormatError("bad PFM scale: " + scale_token);
  }
  if (scale >= 0.0) throw FormatError("big-endian PFM is not supported: " + path.string());
  image.values.resize(static_cast<std::size_t>(image.width) * image.height);
  for (int v = image.height - 1; v >= 0; --v) {
    for (int u = 0; u < image.width; ++u) {
      unsigned char b[4];
      if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated PFM: " + path.string());
      const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      image.values[static_cast<std::size_t>(v * image.width + u)] = std::bit_cast<float>(bits);
    }
  }
  return image;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.values.size() != 3 * static_cast<std::size_t>(image.width) * image.height) {
    throw DimensionError("write_ppm: buffer does not match extents");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.values.data()),
           static_cast<std::streamsize>(image.values.size()));
  if (!os) throw FormatError("failed writing " + path.string());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  if (header_token(is) != "P6") throw FormatError("not a binary PPM: " + path.string());
  RgbImage image;
  image.width = parse_extent(header_token(is), "width");
  image.height = parse_extent(header_token(is), "height");
  if (header_token(is) != "255") throw FormatError("only 8-bit PPM is supported: " + path.string());
  image.values.resize(3 * static_cast<std::size_t>(image.width) * image.height);
  if (!is.read(reinterpret_cast<char*>(image.values.data()),
               static_cast<std::streamsize>(image.values.size()))) {
    throw FormatError("truncated PPM: " + path.string());
  }
  return image;
}

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k) {
  nlohmann::json j = {{"fx", k.fx}, {"fy", k.fy},         {"cx", k.cx},
                      {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad intrinsics file " + path.string() + ": " + e.what());
  }
}

RgbImage to_rgb8(const std::vector<float>& rgb, int width, int height) {
  if (rgb.size() != 3 * static_cast<std::size_t>(width) * height) {
    throw DimensionError("to_rgb8: buffer does not match extents");
  }
  RgbImage image{width, height, std::vector<std::uint8_t>(rgb.size())};
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    image.values[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
  }
  return image;
}

std::vector<float> from_rgb8(const RgbImage& image) {
  std::vector<float> rgb(image.values.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<float>(image.values[i]) / 255.0f;
  return rgb;
}

}  // namespace ghostprobe
