#include "ghostprobe/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <thread>

namespace ghostprobe {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw SpecError("TrainConfig: lr must be a finite value >= 0");
  if (epochs < 1) throw SpecError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw SpecError("TrainConfig: batch_size must be >= 1");
  if (input_size < 1) throw SpecError("TrainConfig: input_size must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw SpecError("TrainConfig: split_fraction must lie in (0, 1)");
  }
  if (!flags.any()) throw SpecError("TrainConfig: flags must not all be false");
  if (max_steps < 0) throw SpecError("TrainConfig: max_steps must be >= 0");
}

std::vector<float> resize_planar(const std::vector<float>& src, int width, int height,
                                 int channels, int size) {
  std::vector<float> out(static_cast<std::size_t>(channels) * size * size);
  for (int y = 0; y < size; ++y) {
    const int sy = std::min(height - 1, static_cast<int>((y + 0.5) * height / size));
    for (int x = 0; x < size; ++x) {
      const int sx = std::min(width - 1, static_cast<int>((x + 0.5) * width / size));
      for (int c = 0; c < channels; ++c) {
        out[static_cast<std::size_t>((c * size + y) * size + x)] =
            src[static_cast<std::size_t>((sy * width + sx) * channels + c)];
      }
    }
  }
  return out;
}

PreparedSample prepare_sample(const Sample& sample, const ModelConfig& model) {
  const auto& frame = sample.frame;
  frame.validate();
  const int s = static_cast<int>(model.input_size);
  PreparedSample p;
  p.id = frame.sample_id;
  p.truth = sample.annotation;
  p.source_width = frame.width();
  p.source_height = frame.height();
  const auto& f = model.flags;
  if (f.rgb) p.image = resize_planar(frame.rgb, frame.width(), frame.height(), 3, s);
  if (f.ig) {
    const auto grad = scharr_gradient(frame);
    const auto ig = resize_planar(grad.magnitude, frame.width(), frame.height(), 1, s);
    p.image.insert(p.image.end(), ig.begin(), ig.end());
  }
  if (!f.rgb && !f.ig) p.image.assign(static_cast<std::size_t>(s) * s, 1.0f);
  p.cloud = backproject(frame, model.max_points);
  const auto mask = rasterize_annotation(sample.annotation, s, s, frame.width(), frame.height());
  p.target.assign(mask.data().begin(), mask.data().end());
  return p;
}

std::vector<PreparedSample> prepare_dataset(const Dataset& ds, const ModelConfig& model) {
  std::vector<PreparedSample> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(prepare_sample(s, model));
  return out;
}

Split split_by_hash(const std::vector<std::string>& ids, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw SpecError("split fraction must lie in (0, 1)");
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  for (std::size_t i = 0; i < ids.size(); ++i) keyed.emplace_back(fnv1a64(ids[i].data(), ids[i].size()), i);
  std::sort(keyed.begin(), keyed.end());
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  Split split;
  for (std::size_t r = 0; r < keyed.size(); ++r) {
    (r < n_train ? split.train : split.validation).push_back(keyed[r].second);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

Batch make_batch(const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& members) {
  if (members.empty()) throw DimensionError("make_batch: empty batch");
  const auto& first = samples.at(members.front());
  const auto s = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(first.target.size()))));
  const auto c = static_cast<std::int64_t>(first.image.size()) / (s * s);
  std::vector<float> image, target;
  std::vector<const PointCloud<float>*> clouds;
  for (const auto m : members) {
    const auto& p = samples.at(m);
    image.insert(image.end(), p.image.begin(), p.image.end());
    target.insert(target.end(), p.target.begin(), p.target.end());
    clouds.push_back(&p.cloud);
  }
  const auto b = static_cast<std::int64_t>(members.size());
  return Batch{Tensor(Shape{b, c, s, s}, std::move(image)), stack_clouds(clouds),
               Tensor(Shape{b, 1, s, s}, std::move(target))};
}

SampleResult predict(const DPGPModel<float>& model, const PreparedSample& sample,
                     const PostprocessOptions& post, double iou_threshold) {
  NoGradGuard guard;
  const std::vector<std::size_t> one{0};
  const std::vector<PreparedSample> view{sample};
  const auto batch = make_batch(view, one);
  const auto prob = model.forward(batch.image, batch.cloud);
  const auto s = prob.dim(3);
  auto dets = postprocess(prob.data(), prob.dim(2), s, post);
  const double sx = static_cast<double>(sample.source_width) / static_cast<double>(s);
  const double sy = static_cast<double>(sample.source_height) / static_cast<double>(prob.dim(2));
  for (auto& d : dets) {
    d.box.x_min *= sx;
    d.box.x_max *= sx;
    d.box.y_min *= sy;
    d.box.y_max *= sy;
  }
  SampleResult r{sample.id, dets, match_and_score(dets, sample.truth, iou_threshold)};
  return r;
}

Evaluation evaluate(const DPGPModel<float>& model, const std::vector<PreparedSample>& samples,
                    const std::vector<std::size_t>& members, int jobs,
                    const PostprocessOptions& post, double iou_threshold) {
  Evaluation ev;
  ev.per_sample.resize(members.size());
  const auto n = members.size();
  const auto workers = static_cast<std::size_t>(std::clamp<std::int64_t>(jobs, 1, std::max<std::int64_t>(1, static_cast<std::int64_t>(n))));
  auto run = [&](std::size_t worker) {
    for (std::size_t i = worker; i < n; i += workers) {
      ev.per_sample[i] = predict(model, samples.at(members[i]), post, iou_threshold);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& r : ev.per_sample) ev.total += r.report;
  return ev;
}

TrainResult train(DPGPModel<float>& model, const std::vector<PreparedSample>& samples,
                  const TrainConfig& cfg, const EpochLogger& log) {
  cfg.validate();
  if (samples.empty()) throw SpecError("train: dataset is empty");
  if (!(cfg.flags == model.config().flags)) throw SpecError("train: flags disagree with the model config");
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  TrainResult result;
  result.split = split_by_hash(ids, cfg.split_fraction);
  const auto& train_set = result.split.train;
  const auto& selection_set = result.split.validation.empty() ? train_set : result.split.validation;
  if (train_set.empty()) throw SpecError("train: split leaves no training samples");

  auto params = model.parameters();
  AdamState<float> adam(params, AdamOptions{cfg.lr, 0.9, 0.999, 1e-8});
  Rng shuffle(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order = train_set;
  result.best = snapshot(params);
  bool done = false;

  for (std::int64_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double last_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = make_batch(samples, members);
      const auto prob = model.forward(batch.image, batch.cloud);
      const auto loss = bce_loss(prob, batch.target);
      if (!loss.all_finite()) {
        throw NumericError("non-finite loss at step " + std::to_string(result.steps) +
                           "; first non-finite value produced by " + first_nonfinite_op(loss));
      }
      zero_grad(params);
      backward(loss);
      adam_step(params, adam);
      last_loss = loss.item();
      result.loss_curve.emplace_back(result.steps, last_loss);
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    result.epochs_run = epoch + 1;
    const auto val = evaluate(model, samples, selection_set).total;
    EvalReport tr;
    if (cfg.stop_at_train_f1 > 0.0) tr = evaluate(model, samples, train_set).total;
    if (val.f1 > result.best_validation_f1) {
      result.best_validation_f1 = val.f1;
      result.best_epoch = epoch;
      result.best = snapshot(params);
    }
    if (log) log(epoch, result.steps, last_loss, tr, val);
    if (cfg.stop_at_train_f1 > 0.0 && tr.f1 >= cfg.stop_at_train_f1) done = true;
  }
  result.last = snapshot(params);
  restore(params, result.best);
  result.train_report = evaluate(model, samples, train_set).total;
  result.validation_report = evaluate(model, samples, selection_set).total;
  return result;
}

void write_loss_curve(const std::filesystem::path& path,
                      const std::vector<std::pair<std::int64_t, double>>& curve) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << "step,loss\n" << std::setprecision(9);
  for (const auto& [step, loss] : curve) os << step << "," << loss << "\n";
  if (!os) throw FormatError("failed writing " + path.string());
}

std::vector<AblationFlags> ablation_flag_sets() {
  return {AblationFlags{false, false, true}, AblationFlags{true, true, false},
          AblationFlags{true, false, true}, AblationFlags{true, true, true}};
}

std::vector<AblationRow> run_ablation(const Dataset& ds, const TrainConfig& base,
                                      const ModelFactory& make_config, const EpochLogger& log) {
  if (ds.samples.empty()) throw SpecError("run_ablation: dataset is empty");
  std::vector<AblationRow> rows;
  for (const auto& flags : ablation_flag_sets()) {
    auto cfg = base;
    cfg.flags = flags;
    auto mcfg = make_config(flags);
    mcfg.flags = flags;
    mcfg.input_size = cfg.input_size;
    Rng rng(cfg.seed);
    DPGPModel<float> model(mcfg, rng);
    const auto prepared = prepare_dataset(ds, mcfg);
    const auto res = train(model, prepared, cfg, log);
    rows.push_back({flags, res.validation_report, res.train_report, res.steps});
  }
  return rows;
}

}  // namespace ghostprobe
