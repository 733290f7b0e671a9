#include "ghostprobe/dataset.hpp"

#include <fstream>

#include "ghostprobe/image_io.hpp"
#include "json.hpp"

namespace ghostprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& doc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << doc.dump(2) << "\n";
  if (!os) throw FormatError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_sample_files(const fs::path& dir, const Sample& sample) {
  const auto& frame = sample.frame;
  const auto sdir = dir / frame.sample_id;
  fs::create_directories(sdir);
  write_pfm(sdir / "depth.pfm", FloatImage{frame.width(), frame.height(), frame.depth});
  write_ppm(sdir / "image.ppm", to_rgb8(frame.rgb, frame.width(), frame.height()));
  write_intrinsics(sdir / "intrinsics.json", frame.intrinsics);
}

void write_index(const fs::path& dir, const DatasetIndex& index) {
  write_json(dir / "index.json",
             json{{"ids", index.ids}, {"base_seed", index.base_seed}, {"split_key", "fnv1a64(id)"}});
}

void write_annotations(const fs::path& dir, const std::vector<Annotation>& anns) {
  json doc = json::object();
  for (const auto& ann : anns) {
    json boxes = json::array();
    for (const auto& b : ann.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    doc[ann.sample_id] = boxes;
  }
  write_json(dir / "annotations.json", doc);
}

DatasetIndex read_index(const fs::path& dir) {
  const auto doc = read_json(dir / "index.json");
  DatasetIndex index;
  try {
    index.ids = doc.at("ids").get<std::vector<std::string>>();
    index.base_seed = doc.value("base_seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
  if (index.ids.empty()) throw FormatError("index.json lists no samples");
  return index;
}

std::map<std::string, Annotation> read_annotations(const fs::path& dir) {
  const auto doc = read_json(dir / "annotations.json");
  if (!doc.is_object()) throw FormatError("annotations.json must be an object");
  std::map<std::string, Annotation> out;
  for (const auto& [id, boxes] : doc.items()) {
    Annotation ann{id, {}};
    for (const auto& b : boxes) {
      if (!b.is_array() || b.size() != 4) throw FormatError("annotation box for " + id + " needs 4 numbers");
      Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      if (!box.valid()) throw FormatError("degenerate annotation box for " + id);
      ann.boxes.push_back(box);
    }
    out.emplace(id, std::move(ann));
  }
  return out;
}

DepthFrame read_frame(const fs::path& sample_dir, const std::string& id) {
  DepthFrame frame;
  frame.sample_id = id;
  frame.intrinsics = read_intrinsics(sample_dir / "intrinsics.json");
  auto depth = read_pfm(sample_dir / "depth.pfm");
  auto rgb = read_ppm(sample_dir / "image.ppm");
  if (depth.width != frame.intrinsics.width || depth.height != frame.intrinsics.height ||
      rgb.width != depth.width || rgb.height != depth.height) {
    throw FormatError(sample_dir.string() + ": depth, image and intrinsics disagree on size");
  }
  frame.depth = std::move(depth.values);
  frame.rgb = from_rgb8(rgb);
  frame.validate();
  return frame;
}

Dataset load_dataset(const fs::path& dir) {
  const auto index = read_index(dir);
  const auto anns = read_annotations(dir);
  Dataset ds;
  for (const auto& id : index.ids) {
    Sample s;
    s.frame = read_frame(dir / id, id);
    const auto it = anns.find(id);
    s.annotation = it == anns.end() ? Annotation{id, {}} : it->second;
    for (const auto& b : s.annotation.boxes) {
      if (b.x_min < 0 || b.y_min < 0 || b.x_max > s.frame.width() || b.y_max > s.frame.height()) {
        throw FormatError("annotation box outside image for " + id);
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ghostprobe
