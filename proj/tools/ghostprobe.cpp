// ghostprobe command line: synth, train, eval, predict, gradcheck, ablate.
// stdout carries JSON only; progress goes to stderr.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ghostprobe/config.hpp"
#include "ghostprobe/gradcheck_suite.hpp"
#include "ghostprobe/overlay.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ghostprobe;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// config file (or defaults), then GHOSTPROBE_SEED, then an explicit --seed
RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed_flag) {
  RunConfig cfg = path.empty() ? default_run_config() : load_run_config(path);
  if (const char* env = std::getenv("GHOSTPROBE_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      cfg.train.seed = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("GHOSTPROBE_SEED is not an unsigned integer: ") + env);
    }
  }
  if (seed_flag) cfg.train.seed = *seed_flag;
  return cfg;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError("refusing to overwrite non-empty " + dir.string() + " (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

json detection_json(const Detection& d) {
  return json{{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}, {"score", d.score}};
}

json ablation_table_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    auto row = report_json(r.validation);
    row["config"] = r.flags.label();
    row["flags"] = {{"rgb", r.flags.rgb}, {"ig", r.flags.ig}, {"pcd", r.flags.pcd}};
    row["train_f1"] = r.train.f1;
    row["steps"] = r.steps;
    out.push_back(row);
  }
  return out;
}

void log_epoch(std::int64_t epoch, std::int64_t step, double loss, const EvalReport& tr,
               const EvalReport& val) {
  std::cerr << "epoch " << epoch << " step " << step << " loss " << loss;
  if (tr.tp + tr.fp + tr.fn > 0) std::cerr << " train_f1 " << tr.f1;
  std::cerr << " val_f1 " << val.f1 << "\n";
}

RunConfig config_for_checkpoint(const std::string& explicit_path, const fs::path& checkpoint) {
  if (!explicit_path.empty()) return load_run_config(explicit_path);
  const auto sidecar = checkpoint.parent_path() / "config.json";
  if (!fs::exists(sidecar)) {
    throw ConfigError("no --config given and no config.json next to " + checkpoint.string());
  }
  return load_run_config(sidecar);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ghost-probe zone detection from RGB, depth gradients and point clouds"};
  app.require_subcommand(1);

  std::string out_dir, data_dir, config_path, checkpoint_path, input_dir, overlay_path, split_name = "all";
  std::size_t count = 0;
  std::uint64_t synth_seed = 0;
  std::optional<std::uint64_t> seed_flag;
  bool force = false;
  int jobs = 1, width = 128, height = 128;
  std::size_t max_elements = 4;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", out_dir, "Target directory")->required();
  synth->add_option("--count", count, "Number of samples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Base seed")->required();
  synth->add_option("--width", width, "Image width")->check(CLI::Range(8, 4096));
  synth->add_option("--height", height, "Image height")->check(CLI::Range(8, 4096));
  synth->add_flag("--force", force, "Replace a non-empty target directory");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--config", config_path, "Run configuration JSON");
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", seed_flag, "Seed (overrides config and GHOSTPROBE_SEED)");
  train_cmd->add_option("--jobs", jobs, "Evaluation threads")->check(CLI::PositiveNumber);
  train_cmd->add_flag("--force", force, "Replace a non-empty output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; metrics JSON on stdout");
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval_cmd->add_option("--config", config_path, "Run configuration (default: config.json beside the checkpoint)");
  eval_cmd->add_option("--split", split_name, "all, train or validation")
      ->check(CLI::IsMember({"all", "train", "validation"}));
  eval_cmd->add_option("--jobs", jobs, "Evaluation threads")->check(CLI::PositiveNumber);

  auto* predict_cmd = app.add_subcommand("predict", "Detect zones in one sample and render an overlay");
  predict_cmd->add_option("--input", input_dir, "Sample directory")->required();
  predict_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  predict_cmd->add_option("--overlay", overlay_path, "Overlay PPM to write")->required();
  predict_cmd->add_option("--config", config_path, "Run configuration (default: config.json beside the checkpoint)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grad_cmd->add_option("--config", config_path, "Run configuration for the composed model");
  grad_cmd->add_option("--max-elements", max_elements,
                       "Checked elements per parameter tensor of the configured model (0 = all)");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the four input combinations");
  ablate_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  ablate_cmd->add_option("--config", config_path, "Run configuration JSON");
  ablate_cmd->add_option("--seed", seed_flag, "Seed (overrides config and GHOSTPROBE_SEED)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      generate_dataset(out_dir, count, synth_seed, force, width, height);
      std::cout << json{{"out", out_dir}, {"count", count}, {"seed", synth_seed},
                        {"checksum", hex64(dataset_checksum(out_dir))}}.dump()
                << "\n";
      return 0;
    }

    if (*train_cmd) {
      auto cfg = resolve_config(config_path, seed_flag);
      cfg.data_path = data_dir;
      cfg.out_path = out_dir;
      const auto ds = load_dataset(data_dir);
      prepare_output_dir(out_dir, force);
      save_run_config(fs::path(out_dir) / "config.json", cfg);
      Rng rng(cfg.train.seed);
      DPGPModel<float> model(cfg.model, rng);
      const auto prepared = prepare_dataset(ds, cfg.model);
      std::cerr << "training " << cfg.train.flags.label() << " on " << prepared.size() << " samples\n";
      const auto res = train(model, prepared, cfg.train, log_epoch);
      write_checkpoint(fs::path(out_dir) / "checkpoint.dpgp", res.best);
      write_checkpoint(fs::path(out_dir) / "last.dpgp", res.last);
      write_loss_curve(fs::path(out_dir) / "loss.csv", res.loss_curve);
      std::cout << json{{"config_hash", config_hash(cfg)},
                        {"steps", res.steps},
                        {"epochs", res.epochs_run},
                        {"best_epoch", res.best_epoch},
                        {"train", report_json(res.train_report)},
                        {"validation", report_json(res.validation_report)},
                        {"checkpoint", (fs::path(out_dir) / "checkpoint.dpgp").string()}}.dump()
                << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto cfg = config_for_checkpoint(config_path, checkpoint_path);
      Rng rng(cfg.train.seed);
      DPGPModel<float> model(cfg.model, rng);
      auto params = model.parameters();
      load_parameters(checkpoint_path, params);
      const auto ds = load_dataset(data_dir);
      const auto prepared = prepare_dataset(ds, cfg.model);
      std::vector<std::string> ids;
      for (const auto& p : prepared) ids.push_back(p.id);
      std::vector<std::size_t> members;
      if (split_name == "all") {
        for (std::size_t i = 0; i < prepared.size(); ++i) members.push_back(i);
      } else {
        const auto split = split_by_hash(ids, cfg.train.split_fraction);
        members = split_name == "train" ? split.train : split.validation;
      }
      const auto ev = evaluate(model, prepared, members, jobs, cfg.post, cfg.iou_threshold);
      json per_sample = json::array();
      for (const auto& r : ev.per_sample) {
        json dets = json::array();
        for (const auto& d : r.detections) dets.push_back(detection_json(d));
        per_sample.push_back({{"id", r.id}, {"tp", r.report.tp}, {"fp", r.report.fp},
                              {"fn", r.report.fn}, {"detections", dets}});
      }
      auto out = report_json(ev.total);
      out["dataset"] = data_dir;
      out["split"] = split_name;
      out["config_hash"] = config_hash(cfg);
      out["per_sample"] = per_sample;
      std::cout << out.dump() << "\n";
      return 0;
    }

    if (*predict_cmd) {
      const auto cfg = config_for_checkpoint(config_path, checkpoint_path);
      Rng rng(cfg.train.seed);
      DPGPModel<float> model(cfg.model, rng);
      auto params = model.parameters();
      load_parameters(checkpoint_path, params);
      const fs::path sample_dir(input_dir);
      const auto id = sample_dir.filename().empty() ? sample_dir.parent_path().filename().string()
                                                    : sample_dir.filename().string();
      Sample sample;
      sample.frame = read_frame(sample_dir, id);
      sample.annotation.sample_id = id;
      const auto anns_path = sample_dir.parent_path() / "annotations.json";
      if (fs::exists(anns_path)) {
        const auto anns = read_annotations(sample_dir.parent_path());
        if (const auto it = anns.find(id); it != anns.end()) sample.annotation = it->second;
      }
      const auto prepared = prepare_sample(sample, cfg.model);
      NoGradGuard guard;
      const auto batch = make_batch(std::vector<PreparedSample>{prepared}, {0});
      const auto prob = model.forward(batch.image, batch.cloud);
      const auto result = predict(model, prepared, cfg.post, cfg.iou_threshold);
      const auto s = static_cast<int>(prob.dim(3));
      write_ppm(overlay_path, render_overlay(sample.frame, prob.data(), s, s, sample.annotation.boxes,
                                             result.detections));
      json dets = json::array();
      for (const auto& d : result.detections) dets.push_back(detection_json(d));
      const json sidecar{{"sample", id}, {"overlay", overlay_path}, {"config_hash", config_hash(cfg)},
                         {"detections", dets}};
      fs::path sidecar_path(overlay_path);
      sidecar_path.replace_extension(".json");
      std::ofstream(sidecar_path) << sidecar.dump(2) << "\n";
      std::cout << sidecar.dump() << "\n";
      return 0;
    }

    if (*grad_cmd) {
      const auto cfg = config_path.empty() ? default_run_config() : load_run_config(config_path);
      std::vector<GradcheckResult> rows = check_all_ops();
      rows.push_back(check_composed_model(composed_check_config()));
      auto configured = check_composed_model(cfg.model, 7, 1e-4, max_elements);
      configured.name = "configured_model";
      rows.push_back(configured);
      json table = json::array();
      bool all = true;
      for (const auto& r : rows) {
        all = all && r.passed;
        table.push_back({{"op", r.name}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance},
                         {"checked", r.checked}, {"status", r.passed ? "pass" : "fail"}});
        std::cerr << std::left << std::setw(22) << r.name << std::setw(14) << r.max_rel_error
                  << (r.passed ? "pass" : "FAIL") << "\n";
      }
      std::cout << json{{"rows", table}, {"passed", all}}.dump() << "\n";
      return all ? 0 : 1;
    }

    if (*ablate_cmd) {
      const auto cfg = resolve_config(config_path, seed_flag);
      const auto ds = load_dataset(data_dir);
      const auto base_model = cfg.model;
      const auto rows = run_ablation(
          ds, cfg.train,
          [&](const AblationFlags& flags) {
            auto m = base_model;
            m.flags = flags;
            m.unet.in_channels = image_channels(flags);
            return m;
          },
          log_epoch);
      for (const auto& r : rows) {
        std::cerr << std::left << std::setw(12) << r.flags.label() << " recall " << r.validation.recall
                  << " precision " << r.validation.precision << " f1 " << r.validation.f1 << "\n";
      }
      std::cout << json{{"dataset", data_dir}, {"config_hash", config_hash(cfg)},
                        {"rows", ablation_table_json(rows)}}.dump()
                << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
