#include "cellseg/loss.hpp"

#include <cmath>
#include <vector>

namespace cellseg {

void LossConfig::validate() const {
  for (double w : {w_ce1, w_dice, w_mae, w_ce2, w_tversky}) {
    if (!(w >= 0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(tversky_alpha >= 0 && tversky_beta >= 0 && tversky_alpha + tversky_beta > 0)) {
    throw ConfigError("tversky alpha and beta must be non-negative with a positive sum");
  }
  if (!(dice_smooth >= 0)) throw ConfigError("dice smoothing must be non-negative");
}

template <class T>
LossResult<T> composite_loss(const HeadOutputs<T>& pred, const TargetTensors<T>& target, const LossConfig& cfg) {
  auto check = [](const ad::Var<T>& v, const Tensor<T>& t, const char* what) {
    if (v.shape() != t.shape()) {
      throw ShapeError(std::string(what) + " prediction " + v.shape().str() + " vs target " + t.shape().str());
    }
  };
  check(pred.sm1_logits, target.sm1, "sm1");
  check(pred.sm2_logits, target.sm2, "sm2");
  check(pred.dm, target.dm, "dm");

  const T smooth = static_cast<T>(cfg.dice_smooth);
  const ad::Var<T> ce1 = ad::softmax_cross_entropy(pred.sm1_logits, target.sm1);
  const ad::Var<T> dice = ad::affine(ad::soft_dice(ad::softmax_channels(pred.sm1_logits), target.sm1, smooth), T(-1), T(1));
  const ad::Var<T> mae = ad::mean_abs_error(pred.dm, target.dm);
  const ad::Var<T> ce2 = ad::softmax_cross_entropy(pred.sm2_logits, target.sm2);
  const ad::Var<T> tv = ad::affine(ad::tversky(ad::softmax_channels(pred.sm2_logits), target.sm2,
                                               static_cast<T>(cfg.tversky_alpha), static_cast<T>(cfg.tversky_beta), smooth),
                                   T(-1), T(1));

  const std::vector<ad::Var<T>> terms{ce1, dice, mae, ce2, tv};
  const char* names[] = {"ce_sm1", "dice_sm1", "mae_dm", "ce_sm2", "tversky_sm2"};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double v = static_cast<double>(terms[i].item());
    if (!std::isfinite(v)) throw TrainingError(std::string("loss term ") + names[i] + " is not finite", names[i]);
  }
  const std::vector<T> weights{static_cast<T>(cfg.w_ce1), static_cast<T>(cfg.w_dice), static_cast<T>(cfg.w_mae),
                               static_cast<T>(cfg.w_ce2), static_cast<T>(cfg.w_tversky)};
  LossResult<T> r;
  r.total = ad::weighted_sum<T>(terms, weights);
  r.terms = {double(ce1.item()), double(dice.item()), double(mae.item()), double(ce2.item()), double(tv.item()),
             double(r.total.item())};
  if (!std::isfinite(r.terms.total)) throw TrainingError("total loss is not finite", "total");
  return r;
}

template LossResult<float> composite_loss(const HeadOutputs<float>&, const TargetTensors<float>&, const LossConfig&);
template LossResult<double> composite_loss(const HeadOutputs<double>&, const TargetTensors<double>&, const LossConfig&);

}  // namespace cellseg
