#include "cellseg/train.hpp"

#include <algorithm>
#include <cstdio>

#include "cellseg/encoders.hpp"
#include "cellseg/targets.hpp"

namespace cellseg {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (n_types < 1) throw ConfigError("number of cell types must be at least 1");
  adamw.validate();
  loss.validate();
  ScheduleConfig s{peak_lr, final_lr, pct_up, div_start, epochs, 2};
  s.validate();
}

std::string loss_curve_csv(const std::vector<EpochRecord>& curve) {
  std::string out = "epoch,train_loss,val_loss,lr\n";
  char buf[128];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    out += buf;
  }
  return out;
}

Batch make_batch(const Model& model, const std::vector<const LabeledImage*>& items, const TrainConfig& cfg,
                 std::mt19937_64* augment_rng) {
  if (items.empty()) throw UsageError("empty batch");
  std::vector<Tensor4> images, sm1, sm2, dm;
  std::vector<FeaturePyramid<float>> dumps;
  std::size_t size = 0;
  for (const LabeledImage* li : items) {
    const RgbImage* img = &li->image;
    const InstanceLabelMap* gt = &li->gt;
    Augmented aug;
    if (augment_rng && !model.uses_dumps()) {
      aug = augment(li->image, li->gt, *augment_rng);
      img = &aug.image;
      gt = &aug.gt;
    }
    if (size == 0) size = gt->height;
    if (gt->height != size || gt->width != size) throw DataError("patches in a batch must be square and equal-sized");
    auto t = make_targets(*gt, cfg.n_types, cfg.dmax);
    sm1.push_back(std::move(t.sm1));
    sm2.push_back(std::move(t.sm2));
    dm.push_back(std::move(t.dm));
    if (model.uses_dumps()) {
      if (li->features.empty()) throw DataError("no feature dump loaded for patch " + li->id);
      dumps.push_back(pyramid_from_levels(li->features));
    } else {
      images.push_back(image_to_tensor(*img));
    }
  }
  Batch b;
  b.input_size = size;
  b.pyramid = model.uses_dumps() ? stack_pyramids(dumps) : model.encode(stack_batch<float>(images));
  b.targets = {stack_batch<float>(sm1), stack_batch<float>(sm2), stack_batch<float>(dm)};
  return b;
}

double evaluate_loss(const Model& model, const std::vector<LabeledImage>& data, const TrainConfig& cfg) {
  if (data.empty()) throw ConfigError("cannot evaluate on an empty set");
  ad::NoGradGuard no_grad;
  double sum = 0;
  for (std::size_t i = 0; i < data.size(); i += cfg.batch_size) {
    std::vector<const LabeledImage*> items;
    for (std::size_t j = i; j < std::min(data.size(), i + cfg.batch_size); ++j) items.push_back(&data[j]);
    const Batch b = make_batch(model, items, cfg, nullptr);
    const auto loss = composite_loss(model.forward(b.pyramid, b.input_size), b.targets, cfg.loss);
    sum += loss.terms.total * static_cast<double>(items.size());
  }
  return sum / static_cast<double>(data.size());
}

FitResult fit(Model& model, const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& val,
              const TrainConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& curve_csv,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  if (val.empty()) throw ConfigError("validation set is empty");
  for (const auto& [name, v] : model.encoder_params()) {
    if (v.requires_grad()) throw UsageError("encoder parameter " + name + " is not frozen");
  }

  std::vector<std::size_t> pool;
  if (cfg.oversample) {
    std::vector<std::vector<std::size_t>> counts;
    for (const auto& li : train) counts.push_back(type_pixel_counts(li.gt, cfg.n_types));
    pool = oversample(counts, cfg.seed);
  } else {
    for (std::size_t i = 0; i < train.size(); ++i) pool.push_back(i);
  }

  FitResult result;
  result.steps_per_epoch = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  const ScheduleConfig sched{cfg.peak_lr, cfg.final_lr, cfg.pct_up, cfg.div_start, cfg.epochs, result.steps_per_epoch};
  sched.validate();

  AdamW<float> opt(model.decoder_params(), cfg.adamw);
  std::mt19937_64 rng(cfg.seed);
  result.initial_val_loss = evaluate_loss(model, val, cfg);
  result.best_val_loss = result.initial_val_loss;

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    double loss_sum = 0;
    double lr = 0;
    for (std::size_t s = 0; s < result.steps_per_epoch; ++s, ++step) {
      std::vector<const LabeledImage*> items;
      for (std::size_t j = s * cfg.batch_size; j < std::min(pool.size(), (s + 1) * cfg.batch_size); ++j) {
        items.push_back(&train[pool[j]]);
      }
      const Batch b = make_batch(model, items, cfg, cfg.augment ? &rng : nullptr);
      const auto loss = composite_loss(model.forward(b.pyramid, b.input_size), b.targets, cfg.loss);
      opt.zero_grad();
      ad::backward(loss.total);
      lr = onecycle_lr(step, sched);
      opt.step(lr);
      loss_sum += loss.terms.total;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(result.steps_per_epoch), evaluate_loss(model, val, cfg), lr};
    result.curve.push_back(rec);
    if (rec.val_loss < result.best_val_loss || result.best_epoch == 0) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      write_checkpoint(checkpoint, model.state());
    }
    write_file_atomic(curve_csv, loss_curve_csv(result.curve));
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace cellseg
