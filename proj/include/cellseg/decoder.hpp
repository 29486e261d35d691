#pragma once

#include <array>
#include <cstdint>

#include "cellseg/encoders.hpp"

namespace cellseg {

struct DecoderConfig {
  std::array<std::size_t, 4> skip_channels{32, 64, 128, 256};
  std::array<std::size_t, 4> skip_reductions{2, 4, 8, 16};
  std::uint32_t n_types = 5;
  std::size_t input_size = 256;
  kernels::Upsample skip_upsample = kernels::Upsample::kBilinear;
  kernels::Upsample body_upsample = kernels::Upsample::kNearest;

  // Throws ConfigError on T < 1, zero channels, or reductions that do not
  // divide the input size or do not double level to level.
  void validate() const;
};

template <class T>
struct HeadOutputs {
  ad::Var<T> sm1_logits;  // (n, 3, H, W)
  ad::Var<T> sm2_logits;  // (n, T + 1, H, W)
  ad::Var<T> dm;          // (n, 4, H, W), sigmoid output
};

// Skip projection, top-down fusion and three task heads. Every conv output
// here except the head logits goes through relu.
template <class T>
class Decoder {
 public:
  static constexpr std::size_t kFusedChannels = 32;

  Decoder(const DecoderConfig& cfg, std::array<std::size_t, 4> in_channels, std::uint64_t seed);

  // 1x1 projection to skip_channels[i], then integer upsampling up to
  // input_size / skip_reductions[i]. A level already larger than its target
  // is a ConfigError. input_size = 0 uses the configured size.
  std::array<ad::Var<T>, 4> project_skips(const FeaturePyramid<T>& pyramid, std::size_t input_size = 0) const;
  // x = s4; x = relu(conv3(cat(up2(x), s_i))) for i = 3, 2, 1; relu(conv3(up2(x))).
  ad::Var<T> decode(const std::array<ad::Var<T>, 4>& skips) const;
  HeadOutputs<T> heads(const ad::Var<T>& fused) const;
  HeadOutputs<T> forward(const FeaturePyramid<T>& pyramid, std::size_t input_size = 0) const;

  ParamList<T> params() const;
  const DecoderConfig& config() const { return cfg_; }
  const std::array<std::size_t, 4>& in_channels() const { return in_channels_; }

  static std::size_t parameter_count(const DecoderConfig& cfg, const std::array<std::size_t, 4>& in_channels);

 private:
  struct Head {
    Conv<T> hidden, out;
  };

  DecoderConfig cfg_;
  std::array<std::size_t, 4> in_channels_;
  std::array<Conv<T>, 4> project_;
  std::array<Conv<T>, 3> fuse_;  // fuse_[i] produces level i + 1 (0-based level i)
  Conv<T> final_;
  Head sm1_, sm2_, dm_;
};

}  // namespace cellseg
