#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cellseg/layers.hpp"

namespace cellseg {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

// One decoupled-weight-decay step:
//   p -= lr * wd * p;  m, v updated;  p -= lr * m_hat / (sqrt(v_hat) + eps)
template <class T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState& state, double lr, const AdamWConfig& cfg);

// AdamW over a fixed parameter list. Every parameter must require a gradient,
// so frozen tensors cannot slip into the optimized set.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig cfg);

  void step(double lr);
  void zero_grad();
  const ParamList<T>& params() const { return params_; }

 private:
  ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<AdamState> state_;
};

struct ScheduleConfig {
  double peak_lr = 1e-4;
  double final_lr = 1e-6;
  double pct_up = 0.3;
  double div_start = 25.0;
  std::size_t total_epochs = 100;
  std::size_t steps_per_epoch = 1;

  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
  // round(pct_up * total_steps), kept inside [1, total_steps - 1].
  std::size_t warmup_steps() const;
  void validate() const;
};

// Cosine ramp from peak/div_start to peak over the warm-up steps, then cosine
// decay to final_lr at total_steps. Later steps stay at final_lr.
double onecycle_lr(std::size_t step, const ScheduleConfig& cfg);

}  // namespace cellseg
