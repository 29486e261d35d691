#include "cellseg/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cellseg {

void AdamWConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("adam eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
}

template <class T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState& state, double lr, const AdamWConfig& cfg) {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
  if (params.size() != grads.size()) throw ShapeError("adamw: parameter and gradient sizes differ");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.m[i];
    double& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double p = static_cast<double>(params[i]) * decay;
    params[i] = static_cast<T>(p - lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
  }
}

template <class T>
AdamW<T>::AdamW(ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& [name, v] : params_) {
    if (!v.requires_grad()) throw UsageError("parameter " + name + " is frozen and cannot be optimized");
  }
  state_.resize(params_.size());
}

template <class T>
void AdamW<T>::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].second;
    const Tensor<T> g = var.grad();
    adamw_step<T>(var.mutable_value().span(), g.span(), state_[i], lr, cfg_);
  }
}

template <class T>
void AdamW<T>::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

std::size_t ScheduleConfig::warmup_steps() const {
  const std::size_t total = total_steps();
  const auto up = static_cast<std::size_t>(std::llround(pct_up * static_cast<double>(total)));
  return std::clamp<std::size_t>(up, 1, total > 1 ? total - 1 : 1);
}

void ScheduleConfig::validate() const {
  if (!(peak_lr > 0 && final_lr > 0)) throw ConfigError("learning rates must be positive");
  if (!(final_lr < peak_lr)) throw ConfigError("final_lr must be below peak_lr");
  if (!(pct_up > 0 && pct_up < 1)) throw ConfigError("pct_up must lie in (0, 1)");
  if (!(div_start >= 1)) throw ConfigError("div_start must be at least 1");
  if (total_epochs == 0 || steps_per_epoch == 0) throw ConfigError("schedule needs at least one step");
  if (total_steps() < 2) throw ConfigError("schedule needs at least two steps");
}

namespace {

double cos_anneal(double from, double to, double frac) {
  return to + (from - to) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

}  // namespace

double onecycle_lr(std::size_t step, const ScheduleConfig& cfg) {
  const std::size_t total = cfg.total_steps();
  const std::size_t up = cfg.warmup_steps();
  if (step >= total) return cfg.final_lr;
  if (step <= up) {
    return cos_anneal(cfg.peak_lr / cfg.div_start, cfg.peak_lr, static_cast<double>(step) / static_cast<double>(up));
  }
  return cos_anneal(cfg.peak_lr, cfg.final_lr,
                    static_cast<double>(step - up) / static_cast<double>(total - up));
}

template void adamw_step<float>(std::span<float>, std::span<const float>, AdamState&, double, const AdamWConfig&);
template void adamw_step<double>(std::span<double>, std::span<const double>, AdamState&, double, const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace cellseg
