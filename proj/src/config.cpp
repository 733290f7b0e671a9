#include "ghostprobe/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ghostprobe {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw SpecError("config: " + path + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw SpecError("config: unknown key " + path + "." + key);
  }
}

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  const auto where = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw SpecError("config: " + where + " must be a boolean");
    out = it->get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw SpecError("config: " + where + " must be a string");
    out = it->get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw SpecError("config: " + where + " must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (it->is_number_unsigned() || it->get<std::int64_t>() >= 0) {
        out = it->get<T>();
      } else {
        throw SpecError("config: " + where + " must be non-negative");
      }
    } else {
      out = it->get<T>();
    }
  } else {
    if (!it->is_number()) throw SpecError("config: " + where + " must be a number");
    out = it->get<T>();
  }
}

std::vector<std::int64_t> read_int_list(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw SpecError("config: " + where + " must be a non-empty integer array");
  std::vector<std::int64_t> out;
  for (const auto& x : v) {
    if (!x.is_number_integer() || x.get<std::int64_t>() < 1) {
      throw SpecError("config: " + where + " entries must be positive integers");
    }
    out.push_back(x.get<std::int64_t>());
  }
  return out;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.model = desk_model_config(cfg.train.flags);
  cfg.train.input_size = cfg.model.input_size;
  return cfg;
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig cfg = default_run_config();
  check_keys(doc, "$", {"seed", "train", "flags", "unet", "pointnet", "fusion", "max_points", "scene",
                        "eval", "paths"});
  read(doc, "$", "seed", cfg.train.seed);
  read(doc, "$", "max_points", cfg.model.max_points);
  if (const auto it = doc.find("train"); it != doc.end()) {
    check_keys(*it, "$.train", {"lr", "epochs", "batch_size", "input_size", "split_fraction",
                                "max_steps", "stop_at_train_f1"});
    read(*it, "$.train", "lr", cfg.train.lr);
    read(*it, "$.train", "epochs", cfg.train.epochs);
    read(*it, "$.train", "batch_size", cfg.train.batch_size);
    read(*it, "$.train", "input_size", cfg.train.input_size);
    read(*it, "$.train", "split_fraction", cfg.train.split_fraction);
    read(*it, "$.train", "max_steps", cfg.train.max_steps);
    read(*it, "$.train", "stop_at_train_f1", cfg.train.stop_at_train_f1);
  }
  if (const auto it = doc.find("flags"); it != doc.end()) {
    check_keys(*it, "$.flags", {"rgb", "ig", "pcd"});
    read(*it, "$.flags", "rgb", cfg.train.flags.rgb);
    read(*it, "$.flags", "ig", cfg.train.flags.ig);
    read(*it, "$.flags", "pcd", cfg.train.flags.pcd);
  }
  if (const auto it = doc.find("unet"); it != doc.end()) {
    check_keys(*it, "$.unet", {"base_channels", "depth"});
    read(*it, "$.unet", "base_channels", cfg.model.unet.base_channels);
    read(*it, "$.unet", "depth", cfg.model.unet.depth);
  }
  if (const auto it = doc.find("pointnet"); it != doc.end()) {
    check_keys(*it, "$.pointnet", {"levels", "fp_widths", "interpolation_k"});
    if (const auto lv = it->find("levels"); lv != it->end()) {
      if (!lv->is_array() || lv->empty()) throw SpecError("config: $.pointnet.levels must be a non-empty array");
      cfg.model.pointnet.levels.clear();
      for (std::size_t i = 0; i < lv->size(); ++i) {
        const auto path = "$.pointnet.levels[" + std::to_string(i) + "]";
        const auto& entry = (*lv)[i];
        check_keys(entry, path, {"n_out", "k", "mlp"});
        SALevelConfig level;
        read(entry, path, "n_out", level.n_out);
        read(entry, path, "k", level.k);
        if (!entry.contains("mlp")) throw SpecError("config: " + path + ".mlp is required");
        level.mlp_widths = read_int_list(entry["mlp"], path + ".mlp");
        cfg.model.pointnet.levels.push_back(level);
      }
    }
    if (const auto fp = it->find("fp_widths"); fp != it->end()) {
      cfg.model.pointnet.fp_widths = read_int_list(*fp, "$.pointnet.fp_widths");
    }
    read(*it, "$.pointnet", "interpolation_k", cfg.model.pointnet.interpolation_k);
  }
  if (const auto it = doc.find("fusion"); it != doc.end()) {
    check_keys(*it, "$.fusion", {"dim", "fuse_level", "point_level"});
    read(*it, "$.fusion", "dim", cfg.model.fusion.dim);
    read(*it, "$.fusion", "fuse_level", cfg.model.fusion.fuse_level);
    read(*it, "$.fusion", "point_level", cfg.model.fusion.point_level);
  }
  if (const auto it = doc.find("scene"); it != doc.end()) {
    check_keys(*it, "$.scene", {"width", "height"});
    read(*it, "$.scene", "width", cfg.scene_width);
    read(*it, "$.scene", "height", cfg.scene_height);
  }
  if (const auto it = doc.find("eval"); it != doc.end()) {
    check_keys(*it, "$.eval", {"threshold", "min_area_fraction", "iou_threshold"});
    read(*it, "$.eval", "threshold", cfg.post.threshold);
    read(*it, "$.eval", "min_area_fraction", cfg.post.min_area_fraction);
    read(*it, "$.eval", "iou_threshold", cfg.iou_threshold);
  }
  if (const auto it = doc.find("paths"); it != doc.end()) {
    check_keys(*it, "$.paths", {"data", "out"});
    read(*it, "$.paths", "data", cfg.data_path);
    read(*it, "$.paths", "out", cfg.out_path);
  }

  cfg.model.flags = cfg.train.flags;
  cfg.model.unet.in_channels = image_channels(cfg.train.flags);
  cfg.model.input_size = cfg.train.input_size;
  cfg.train.validate();
  cfg.model.validate();
  if (cfg.scene_width < 8 || cfg.scene_height < 8) throw SpecError("config: scene must be at least 8x8");
  if (!(cfg.post.threshold > 0.0 && cfg.post.threshold < 1.0)) {
    throw SpecError("config: eval.threshold must lie in (0, 1)");
  }
  if (!(cfg.post.min_area_fraction >= 0.0 && cfg.post.min_area_fraction < 1.0)) {
    throw SpecError("config: eval.min_area_fraction must lie in [0, 1)");
  }
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0)) {
    throw SpecError("config: eval.iou_threshold must lie in (0, 1]");
  }
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json levels = json::array();
  for (const auto& l : cfg.model.pointnet.levels) {
    levels.push_back({{"n_out", l.n_out}, {"k", l.k}, {"mlp", l.mlp_widths}});
  }
  const auto& t = cfg.train;
  return json{
      {"seed", t.seed},
      {"train",
       {{"lr", t.lr}, {"epochs", t.epochs}, {"batch_size", t.batch_size}, {"input_size", t.input_size},
        {"split_fraction", t.split_fraction}, {"max_steps", t.max_steps},
        {"stop_at_train_f1", t.stop_at_train_f1}}},
      {"flags", {{"rgb", t.flags.rgb}, {"ig", t.flags.ig}, {"pcd", t.flags.pcd}}},
      {"unet", {{"base_channels", cfg.model.unet.base_channels}, {"depth", cfg.model.unet.depth}}},
      {"pointnet",
       {{"levels", levels}, {"fp_widths", cfg.model.pointnet.fp_widths},
        {"interpolation_k", cfg.model.pointnet.interpolation_k}}},
      {"fusion",
       {{"dim", cfg.model.fusion.dim}, {"fuse_level", cfg.model.fusion.fuse_level},
        {"point_level", cfg.model.fusion.point_level}}},
      {"max_points", cfg.model.max_points},
      {"scene", {{"width", cfg.scene_width}, {"height", cfg.scene_height}}},
      {"eval",
       {{"threshold", cfg.post.threshold}, {"min_area_fraction", cfg.post.min_area_fraction},
        {"iou_threshold", cfg.iou_threshold}}},
      {"paths", {{"data", cfg.data_path}, {"out", cfg.out_path}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw SpecError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw SpecError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const RunConfig& cfg) {
  // paths do not change what is computed
  auto doc = to_json(cfg);
  doc.erase("paths");
  const auto text = doc.dump();
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(text.data(), text.size());
  return os.str();
}

json report_json(const EvalReport& r) {
  return json{{"tp", r.tp},         {"fp", r.fp},
              {"fn", r.fn},         {"recall", r.recall},
              {"precision", r.precision}, {"f1", r.f1}};
}

}  // namespace ghostprobe
