#include "cellseg/decoder.hpp"

#include <string>

namespace cellseg {

void DecoderConfig::validate() const {
  if (n_types < 1) throw ConfigError("number of cell types must be at least 1");
  for (std::size_t i = 0; i < 4; ++i) {
    if (skip_channels[i] == 0) throw ConfigError("skip channel counts must be positive");
    if (skip_reductions[i] == 0 || input_size % skip_reductions[i] != 0) {
      throw ConfigError("reduction " + std::to_string(skip_reductions[i]) + " does not divide input size " +
                        std::to_string(input_size));
    }
  }
  if (skip_reductions[0] != 2) throw ConfigError("the shallowest skip must sit at reduction 2");
  for (std::size_t i = 1; i < 4; ++i) {
    if (skip_reductions[i] != 2 * skip_reductions[i - 1]) throw ConfigError("skip reductions must double per level");
  }
}

template <class T>
Decoder<T>::Decoder(const DecoderConfig& cfg, std::array<std::size_t, 4> in_channels, std::uint64_t seed)
    : cfg_(cfg), in_channels_(in_channels) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& s = cfg_.skip_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    if (in_channels[i] == 0) throw ConfigError("encoder level channel counts must be positive");
    project_[i] = make_conv<T>(in_channels[i], s[i], 1, 1, 0, rng);
  }
  for (std::size_t i = 0; i < 3; ++i) fuse_[i] = make_conv<T>(s[i + 1] + s[i], s[i], 3, 1, 1, rng);
  final_ = make_conv<T>(s[0], kFusedChannels, 3, 1, 1, rng);
  const std::size_t f = kFusedChannels;
  sm1_ = {make_conv<T>(f, f, 3, 1, 1, rng), make_conv<T>(f, 3, 1, 1, 0, rng)};
  sm2_ = {make_conv<T>(f, f, 3, 1, 1, rng), make_conv<T>(f, cfg_.n_types + 1u, 1, 1, 0, rng)};
  dm_ = {make_conv<T>(f, f, 3, 1, 1, rng), make_conv<T>(f, 4, 1, 1, 0, rng)};
}

template <class T>
std::array<ad::Var<T>, 4> Decoder<T>::project_skips(const FeaturePyramid<T>& pyramid, std::size_t input_size) const {
  pyramid.validate();
  if (input_size == 0) input_size = cfg_.input_size;
  std::array<ad::Var<T>, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const Shape s = pyramid.levels[i].shape();
    if (s.c != in_channels_[i]) {
      throw ShapeError("level " + std::to_string(i + 1) + " has " + std::to_string(s.c) + " channels, decoder built for " +
                       std::to_string(in_channels_[i]));
    }
    if (input_size % cfg_.skip_reductions[i] != 0) {
      throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by reduction " +
                        std::to_string(cfg_.skip_reductions[i]));
    }
    const std::size_t target = input_size / cfg_.skip_reductions[i];
    if (s.h > target || s.w > target) {
      throw ConfigError("level " + std::to_string(i + 1) + " grid " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " exceeds target " + std::to_string(target) + "; downsampling skips is unsupported");
    }
    if (s.h != s.w || target % s.h != 0) {
      throw ConfigError("level " + std::to_string(i + 1) + " grid " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " does not upsample to " + std::to_string(target) + " by an integer factor");
    }
    out[i] = ad::upsample(project_[i](pyramid.levels[i]), target / s.h, cfg_.skip_upsample);
  }
  return out;
}

template <class T>
ad::Var<T> Decoder<T>::decode(const std::array<ad::Var<T>, 4>& skips) const {
  ad::Var<T> x = skips[3];
  for (std::size_t i = 3; i-- > 0;) {
    x = ad::relu(fuse_[i](ad::concat_channels(ad::upsample(x, 2, cfg_.body_upsample), skips[i])));
  }
  return ad::relu(final_(ad::upsample(x, 2, cfg_.body_upsample)));
}

template <class T>
HeadOutputs<T> Decoder<T>::heads(const ad::Var<T>& fused) const {
  if (fused.shape().c != kFusedChannels) throw ShapeError("heads expect 32 fused channels, got " + fused.shape().str());
  auto run = [&](const Head& h) { return h.out(ad::relu(h.hidden(fused))); };
  return {run(sm1_), run(sm2_), ad::sigmoid(run(dm_))};
}

template <class T>
HeadOutputs<T> Decoder<T>::forward(const FeaturePyramid<T>& pyramid, std::size_t input_size) const {
  return heads(decode(project_skips(pyramid, input_size)));
}

template <class T>
ParamList<T> Decoder<T>::params() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < 4; ++i) project_[i].append_params("decoder.project" + std::to_string(i + 1), out);
  for (std::size_t i = 0; i < 3; ++i) fuse_[i].append_params("decoder.fuse" + std::to_string(i + 1), out);
  final_.append_params("decoder.final", out);
  for (auto [name, h] : {std::pair{"sm1", &sm1_}, std::pair{"sm2", &sm2_}, std::pair{"dm", &dm_}}) {
    h->hidden.append_params(std::string("head.") + name + ".hidden", out);
    h->out.append_params(std::string("head.") + name + ".out", out);
  }
  return out;
}

template <class T>
std::size_t Decoder<T>::parameter_count(const DecoderConfig& cfg, const std::array<std::size_t, 4>& in_channels) {
  const auto& s = cfg.skip_channels;
  const std::size_t f = kFusedChannels;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 4; ++i) n += Conv<T>::param_count(in_channels[i], s[i], 1);
  for (std::size_t i = 0; i < 3; ++i) n += Conv<T>::param_count(s[i + 1] + s[i], s[i], 3);
  n += Conv<T>::param_count(s[0], f, 3);
  for (std::size_t out : {std::size_t{3}, std::size_t{cfg.n_types} + 1, std::size_t{4}}) {
    n += Conv<T>::param_count(f, f, 3) + Conv<T>::param_count(f, out, 1);
  }
  return n;
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace cellseg
