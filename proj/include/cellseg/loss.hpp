#pragma once

#include <string>

#include "cellseg/decoder.hpp"

namespace cellseg {

struct LossConfig {
  double w_ce1 = 1.0;
  double w_dice = 1.0;
  double w_mae = 1.0;
  double w_ce2 = 1.0;
  double w_tversky = 1.0;
  double tversky_alpha = 0.3;  // false positives
  double tversky_beta = 0.7;   // false negatives
  double dice_smooth = 1.0;

  void validate() const;
};

// Batched targets, same layout as the head outputs.
template <class T>
struct TargetTensors {
  Tensor<T> sm1;
  Tensor<T> sm2;
  Tensor<T> dm;
};

struct LossBreakdown {
  double ce1 = 0, dice = 0, mae = 0, ce2 = 0, tversky = 0, total = 0;
};

template <class T>
struct LossResult {
  ad::Var<T> total;
  LossBreakdown terms;  // unweighted terms; `total` is the weighted sum
};

//   w_ce1 CE(sm1) + w_dice (1 - dice(sm1)) + w_mae MAE(dm)
//   + w_ce2 CE(sm2) + w_tversky (1 - tversky(sm2))
// Dice and Tversky act on softmax probabilities. A non-finite term raises
// TrainingError naming it.
template <class T>
LossResult<T> composite_loss(const HeadOutputs<T>& pred, const TargetTensors<T>& target, const LossConfig& cfg);

}  // namespace cellseg
