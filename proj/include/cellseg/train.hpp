#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cellseg/dataset.hpp"
#include "cellseg/loss.hpp"
#include "cellseg/model.hpp"
#include "cellseg/optim.hpp"

namespace cellseg {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  double peak_lr = 1e-4;
  double final_lr = 1e-6;
  double pct_up = 0.3;
  double div_start = 25.0;
  AdamWConfig adamw;
  LossConfig loss;
  std::uint32_t n_types = 5;
  std::uint32_t dmax = 64;
  bool augment = true;
  bool oversample = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean over the epoch's optimizer steps
  double val_loss = 0;
  double lr = 0;  // rate of the epoch's last step
};

struct FitResult {
  double initial_val_loss = 0;  // before the first step
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  std::size_t steps_per_epoch = 0;
};

// `epoch,train_loss,val_loss,lr` with 9 significant digits.
std::string loss_curve_csv(const std::vector<EpochRecord>& curve);

// One batch of model inputs and targets.
struct Batch {
  FeaturePyramid<float> pyramid;
  TargetTensors<float> targets;
  std::size_t input_size = 0;
};

Batch make_batch(const Model& model, const std::vector<const LabeledImage*>& items, const TrainConfig& cfg,
                 std::mt19937_64* augment_rng);

// Mean composite loss over `data` in fixed order, without a tape.
double evaluate_loss(const Model& model, const std::vector<LabeledImage>& data, const TrainConfig& cfg);

// Trains the decoder with AdamW under the one-cycle schedule. After every
// epoch the validation loss is computed; each improvement rewrites the
// checkpoint, and the loss curve CSV is rewritten every epoch. Both writes
// are atomic. The encoder is never touched.
FitResult fit(Model& model, const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& val,
              const TrainConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& curve_csv,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace cellseg
