#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ghostprobe/adam.hpp"
#include "ghostprobe/checkpoint.hpp"
#include "ghostprobe/dataset.hpp"
#include "ghostprobe/model.hpp"

namespace ghostprobe {

struct TrainConfig {
  double lr = 1e-4;
  std::int64_t epochs = 300;
  std::int64_t batch_size = 4;
  std::int64_t input_size = 64;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;
  AblationFlags flags;
  // 0 disables each of these.
  std::int64_t max_steps = 0;
  double stop_at_train_f1 = 0.0;

  void validate() const;
};

// One sample resized to the network input; computed once per dataset.
struct PreparedSample {
  std::string id;
  std::vector<float> image;  // [C,S,S]
  PointCloud<float> cloud;   // [1,P,3]
  std::vector<float> target; // [S,S]
  Annotation truth;          // source pixel coordinates
  int source_width = 0;
  int source_height = 0;
};

// Nearest-neighbor resize of an interleaved H x W x C buffer to S x S, planar output.
std::vector<float> resize_planar(const std::vector<float>& src, int width, int height,
                                 int channels, int size);

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& model);
std::vector<PreparedSample> prepare_dataset(const Dataset& ds, const ModelConfig& model);

// Ids sorted by FNV-1a of the id; the first round(fraction * n) train.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split split_by_hash(const std::vector<std::string>& ids, double fraction);

struct Batch {
  Tensor image;
  PointCloud<float> cloud;
  Tensor target;
};
Batch make_batch(const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& members);

struct SampleResult {
  std::string id;
  std::vector<Detection> detections;  // source pixel coordinates
  EvalReport report;
};

struct Evaluation {
  EvalReport total;
  std::vector<SampleResult> per_sample;
};

// Inference on one prepared sample; detections are mapped back to source pixels.
SampleResult predict(const DPGPModel<float>& model, const PreparedSample& sample,
                     const PostprocessOptions& post = {}, double iou_threshold = 0.5);

// Samples are evaluated on up to `jobs` threads; counts are summed in index order.
Evaluation evaluate(const DPGPModel<float>& model, const std::vector<PreparedSample>& samples,
                    const std::vector<std::size_t>& members, int jobs = 1,
                    const PostprocessOptions& post = {}, double iou_threshold = 0.5);

struct TrainResult {
  std::vector<std::pair<std::int64_t, double>> loss_curve;  // (step, loss)
  std::int64_t steps = 0;
  std::int64_t epochs_run = 0;
  std::int64_t best_epoch = -1;
  double best_validation_f1 = -1.0;
  EvalReport train_report;       // of the returned parameters
  EvalReport validation_report;  // of the returned parameters
  std::vector<CheckpointRecord> best;  // best validation F1
  std::vector<CheckpointRecord> last;  // parameters when training stopped
  Split split;
};

using EpochLogger = std::function<void(std::int64_t epoch, std::int64_t step, double loss,
                                       const EvalReport& train, const EvalReport& val)>;

// Trains in place. On return the model holds the best-validation parameters;
// the parameters at the last step are kept in TrainResult::last.
TrainResult train(DPGPModel<float>& model, const std::vector<PreparedSample>& samples,
                  const TrainConfig& cfg, const EpochLogger& log = {});

void write_loss_curve(const std::filesystem::path& path,
                      const std::vector<std::pair<std::int64_t, double>>& curve);

struct AblationRow {
  AblationFlags flags;
  EvalReport validation;
  EvalReport train;
  std::int64_t steps = 0;
};

// The four flag sets in table order: PCD-only, RGB+IG, RGB+PCD, RGB+IG+PCD.
std::vector<AblationFlags> ablation_flag_sets();

using ModelFactory = std::function<ModelConfig(const AblationFlags&)>;

std::vector<AblationRow> run_ablation(const Dataset& ds, const TrainConfig& base,
                                      const ModelFactory& make_config,
                                      const EpochLogger& log = {});

}  // namespace ghostprobe
