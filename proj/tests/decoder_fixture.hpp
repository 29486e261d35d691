#pragma once

// Small double-precision decoder + composite loss problem at a 32x32 input,
// shared by the decoder unit tests and the acceptance gradient suite.

#include "cellseg/loss.hpp"
#include "gradcheck.hpp"

namespace cellseg::testing {

inline DecoderConfig small_decoder_config(std::uint32_t n_types) {
  DecoderConfig cfg;
  cfg.skip_channels = {4, 4, 6, 8};
  cfg.n_types = n_types;
  cfg.input_size = 32;
  return cfg;
}

// Random pyramid feeding a 32x32 decoder: hierarchical grids (16, 8, 4, 2) or
// four 2x2 isotropic levels.
inline FeaturePyramid<double> random_pyramid(bool isotropic, std::size_t channels, std::mt19937_64& rng,
                                             bool requires_grad) {
  FeaturePyramid<double> p;
  p.isotropic = isotropic;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t g = isotropic ? 2 : (16 >> i);
    p.levels[i] = ad::Var<double>::leaf(random_tensor({1, channels, g, g}, rng), requires_grad);
    p.source_block[i] = static_cast<std::uint32_t>(i);
  }
  return p;
}

inline TargetTensors<double> random_targets(std::size_t n_types, std::size_t size, std::mt19937_64& rng) {
  return {random_one_hot({1, 3, size, size}, rng), random_one_hot({1, n_types + 1, size, size}, rng),
          random_tensor({1, 4, size, size}, rng, 0.0, 1.0)};
}

// Finite-difference check of the full decoder + composite loss with respect
// to every decoder parameter and every pyramid level.
inline GradCheckResult decoder_loss_gradcheck(std::uint64_t seed, std::size_t max_per_leaf) {
  std::mt19937_64 rng(seed);
  const std::uint32_t n_types = 2 + static_cast<std::uint32_t>(seed % 3);
  const bool isotropic = seed % 2 == 1;
  const Decoder<double> dec(small_decoder_config(n_types), {3, 3, 3, 3}, seed);
  // Random biases move relu kinks away from exact zeros.
  for (auto& [name, v] : dec.params()) {
    if (name.ends_with(".bias")) {
      auto& t = v.mutable_value();
      t = random_tensor(t.shape(), rng, -0.1, 0.1);
    }
  }
  const auto pyr = random_pyramid(isotropic, 3, rng, true);
  const auto target = random_targets(n_types, 32, rng);
  LossConfig lc;
  std::vector<ad::Var<double>> leaves(pyr.levels.begin(), pyr.levels.end());
  for (auto& [name, v] : dec.params()) leaves.push_back(v);
  return check_gradients([&] { return composite_loss(dec.forward(pyr), target, lc).total; }, leaves, 1e-5,
                         max_per_leaf, rng, 1e-5);
}

}  // namespace cellseg::testing
