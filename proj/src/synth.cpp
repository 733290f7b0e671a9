#include "ghostprobe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ghostprobe/dataset.hpp"
#include "ghostprobe/rng.hpp"

namespace ghostprobe {

namespace {

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

int to_index(double v) { return static_cast<int>(std::floor(v + 0.5)); }

std::array<double, 3> road_color(const SceneSpec& spec, int row) {
  const double t = std::clamp((row - spec.intrinsics().cy) / (spec.height - 1 - spec.intrinsics().cy), 0.0, 1.0);
  const double g = 0.30 + 0.25 * t;
  return {g, g, g * 1.02};
}

std::array<double, 3> sky_color(const SceneSpec& spec, int row) {
  const double t = row / std::max(1.0, spec.intrinsics().cy);
  return {0.55 + 0.15 * t, 0.70 + 0.10 * t, 0.92};
}

}  // namespace

CameraIntrinsics SceneSpec::intrinsics() const {
  return CameraIntrinsics{0.8 * width, 0.8 * width, width / 2.0, height / 2.0, width, height};
}

// The ground is a plane seen from a level camera, so inverse depth is linear
// in the image row: far at the horizon row, near at the bottom row.
double ground_row(const SceneSpec& spec, double d) {
  const double cy = spec.intrinsics().cy;
  const double t = (1.0 / d - 1.0 / spec.far_depth) / (1.0 / spec.near_depth - 1.0 / spec.far_depth);
  return cy + t * (spec.height - 1 - cy);
}

double ground_depth(const SceneSpec& spec, double row) {
  const double cy = spec.intrinsics().cy;
  if (row <= cy) return spec.far_depth;
  const double t = (row - cy) / (spec.height - 1 - cy);
  return 1.0 / (1.0 / spec.far_depth + t * (1.0 / spec.near_depth - 1.0 / spec.far_depth));
}

SlabFootprint footprint(const SceneSpec& spec, const Occluder& occ) {
  const auto k = spec.intrinsics();
  SlabFootprint f;
  f.left = k.cx + k.fx * (occ.lateral - occ.width / 2.0) / occ.depth;
  f.right = k.cx + k.fx * (occ.lateral + occ.width / 2.0) / occ.depth;
  f.bottom = ground_row(spec, occ.depth) + 0.5;
  f.top = f.bottom - occ.height * k.fy / occ.depth;
  return f;
}

void SceneSpec::validate() const {
  if (width < 8 || height < 8) throw SpecError("SceneSpec: image must be at least 8x8");
  if (!(near_depth > 0.0) || !(far_depth > near_depth)) {
    throw SpecError("SceneSpec: need 0 < near_depth < far_depth");
  }
  if (noise_std < 0.0) throw SpecError("SceneSpec: noise_std must be >= 0");
  if (!(zone_width > 0.0) || !(zone_height > 0.0)) throw SpecError("SceneSpec: zone size must be positive");
  for (const auto& occ : occluders) {
    if (!(occ.width > 0.0) || !(occ.height > 0.0)) {
      throw SpecError("SceneSpec: occluder width and height must be positive");
    }
    if (!(occ.depth >= near_depth) || !(occ.depth < far_depth)) {
      throw SpecError("SceneSpec: occluder depth must lie in [near_depth, far_depth)");
    }
    const auto f = footprint(*this, occ);
    if (f.left < 0.0 || f.right > width || f.top < 0.0 || f.bottom > height) {
      throw SpecError("SceneSpec: occluder outside frame");
    }
  }
}

Box ghost_zone(const SceneSpec& spec, const Occluder& occ) {
  const auto k = spec.intrinsics();
  const auto f = footprint(spec, occ);
  const double zw = std::round(spec.zone_width * k.fx / occ.depth);
  const double zh = std::round(spec.zone_height * k.fy / occ.depth);
  const double bottom = to_index(f.bottom);
  Box b;
  if ((f.left + f.right) / 2.0 <= k.cx) {
    b.x_min = to_index(f.right);
    b.x_max = b.x_min + zw;
  } else {
    b.x_max = to_index(f.left);
    b.x_min = b.x_max - zw;
  }
  b.y_max = bottom;
  b.y_min = bottom - zh;
  b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(spec.width));
  b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(spec.width));
  b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(spec.height));
  b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(spec.height));
  return b.valid() ? b : Box{};
}

Sample generate(const SceneSpec& spec, const std::string& sample_id) {
  spec.validate();
  const int w = spec.width, h = spec.height;
  Sample out;
  auto& frame = out.frame;
  frame.intrinsics = spec.intrinsics();
  frame.sample_id = sample_id;
  frame.depth.assign(static_cast<std::size_t>(w * h), 0.0f);
  frame.rgb.assign(static_cast<std::size_t>(w * h * 3), 0.0f);
  std::vector<double> depth(static_cast<std::size_t>(w * h));
  std::vector<std::array<double, 3>> color(static_cast<std::size_t>(w * h));
  const double cy = frame.intrinsics.cy;
  for (int v = 0; v < h; ++v) {
    const auto c = v < cy ? sky_color(spec, v) : road_color(spec, v);
    for (int u = 0; u < w; ++u) {
      depth[static_cast<std::size_t>(v * w + u)] = ground_depth(spec, v);
      color[static_cast<std::size_t>(v * w + u)] = c;
    }
  }

  // Painter's order, farthest slab first.
  std::vector<const Occluder*> order;
  for (const auto& occ : spec.occluders) order.push_back(&occ);
  std::stable_sort(order.begin(), order.end(),
                   [](const Occluder* a, const Occluder* b) { return a->depth > b->depth; });
  for (const auto* occ : order) {
    const auto f = footprint(spec, *occ);
    const int u0 = to_index(f.left), u1 = to_index(f.right);
    const int v0 = to_index(f.top), v1 = to_index(f.bottom);
    for (int v = std::max(v0, 0); v < std::min(v1, h); ++v) {
      // slight vertical shading so slabs are not perfectly flat in RGB
      const double shade = 1.0 - 0.15 * (v1 - v) / std::max(1.0, static_cast<double>(v1 - v0));
      for (int u = std::max(u0, 0); u < std::min(u1, w); ++u) {
        const auto i = static_cast<std::size_t>(v * w + u);
        depth[i] = occ->depth;
        color[i] = {occ->color[0] * shade, occ->color[1] * shade, occ->color[2] * shade};
      }
    }
  }

  Rng rng(spec.seed);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = depth[i] + (spec.noise_std > 0.0 ? rng.normal(0.0, spec.noise_std) : 0.0);
    frame.depth[i] = static_cast<float>(std::max(d, 1e-3));
    for (int c = 0; c < 3; ++c) frame.rgb[i * 3 + c] = static_cast<float>(quantize8(color[i][c]));
  }

  out.annotation.sample_id = sample_id;
  for (const auto& occ : spec.occluders) {
    const auto zone = ghost_zone(spec, occ);
    if (zone.valid()) out.annotation.boxes.push_back(zone);
  }
  return out;
}

SceneSpec random_scene_spec(std::uint64_t seed, int width, int height) {
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = rng();
  spec.width = width;
  spec.height = height;
  spec.near_depth = rng.uniform(2.5, 6.0);
  spec.far_depth = rng.uniform(15.0, 25.0);
  const auto roll = rng.below(10);
  const int count = roll == 0 ? 0 : (roll < 6 ? 1 : 2);
  const auto k = spec.intrinsics();

  std::vector<std::pair<double, double>> taken;  // occupied column spans, slab plus zone
  for (int n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      Occluder occ;
      occ.height = rng.uniform(1.2, 3.0);
      occ.depth = rng.uniform(spec.near_depth + 1.5, spec.far_depth - 4.0);
      occ.width = rng.uniform(1.5, 4.5);
      const double lo = (1.0 - k.cx) * occ.depth / k.fx + occ.width / 2.0;
      const double hi = (width - 1.0 - k.cx) * occ.depth / k.fx - occ.width / 2.0;
      if (hi <= lo) continue;
      occ.lateral = rng.uniform(lo, hi);
      if (rng.uniform() < 0.3) {
        // road-like gray: visible in depth, faint in color
        const auto road = road_color(spec, to_index(ground_row(spec, occ.depth)));
        const double jitter = rng.uniform(-0.04, 0.04);
        occ.color = {road[0] + jitter, road[1] + jitter, road[2] + jitter};
      } else {
        occ.color = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      }
      const auto f = footprint(spec, occ);
      if (f.top < 0.0 || f.left < 0.0 || f.right > width) continue;
      double span_lo = f.left, span_hi = f.right;
      const double zw = spec.zone_width * k.fx / occ.depth;
      if ((f.left + f.right) / 2.0 <= k.cx) {
        span_hi += zw;
      } else {
        span_lo -= zw;
      }
      const bool clash = std::any_of(taken.begin(), taken.end(), [&](const auto& s) {
        return span_lo < s.second + 2.0 && s.first < span_hi + 2.0;
      });
      if (clash) continue;
      taken.emplace_back(span_lo, span_hi);
      spec.occluders.push_back(occ);
      break;
    }
  }
  return spec;
}

std::string sample_name(std::size_t index) {
  std::ostringstream os;
  os << "s" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

std::vector<std::string> generate_dataset(const std::filesystem::path& dir, std::size_t n,
                                          std::uint64_t base_seed, bool force, int width,
                                          int height) {
  namespace fs = std::filesystem;
  if (n < 1) throw SpecError("generate_dataset: count must be >= 1");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError("refusing to write into non-empty directory " + dir.string());
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  Rng seeds(base_seed);
  DatasetIndex index;
  index.base_seed = base_seed;
  std::vector<Annotation> anns;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = sample_name(i);
    const auto spec = random_scene_spec(seeds(), width, height);
    const auto sample = generate(spec, id);
    write_sample_files(dir, sample);
    index.ids.push_back(id);
    anns.push_back(sample.annotation);
  }
  write_index(dir, index);
  write_annotations(dir, anns);
  return index.ids;
}

std::uint64_t dataset_checksum(const std::filesystem::path& dir) {
  const auto index = read_index(dir);
  std::vector<std::filesystem::path> files{dir / "index.json", dir / "annotations.json"};
  for (const auto& id : index.ids) {
    for (const char* name : {"depth.pfm", "image.ppm", "intrinsics.json"}) files.push_back(dir / id / name);
  }
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& f : files) {
    std::ifstream is(f, std::ios::binary);
    if (!is) throw FormatError("missing dataset file " + f.string());
    const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

}  // namespace ghostprobe
