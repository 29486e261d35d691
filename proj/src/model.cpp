#include "cellseg/model.hpp"

#include <map>
#include <string>

namespace cellseg {

EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "hierarchical") return EncoderKind::kHierarchical;
  if (s == "isotropic") return EncoderKind::kIsotropic;
  if (s == "dump") return EncoderKind::kDump;
  throw ConfigError("unknown encoder kind '" + std::string(s) + "' (hierarchical|isotropic|dump)");
}

const char* to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::kHierarchical: return "hierarchical";
    case EncoderKind::kIsotropic: return "isotropic";
    case EncoderKind::kDump: return "dump";
  }
  return "?";
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  std::array<std::size_t, 4> channels{};
  switch (cfg_.encoder) {
    case EncoderKind::kHierarchical:
      hier_ = std::make_unique<ToyHierarchicalEncoder<float>>(cfg_.base_channels, cfg_.seed);
      channels = hier_->channels();
      break;
    case EncoderKind::kIsotropic:
      iso_ = std::make_unique<ToyIsotropicEncoder<float>>(cfg_.patch_size, cfg_.embed_dim, cfg_.n_blocks,
                                                          select_blocks(cfg_.n_blocks, cfg_.strategy), cfg_.seed);
      channels = iso_->channels();
      break;
    case EncoderKind::kDump:
      channels = cfg_.dump_channels;
      break;
  }
  set_requires_grad(encoder_params(), false);
  decoder_ = std::make_unique<Decoder<float>>(cfg_.decoder, channels, cfg_.seed + 1);
}

FeaturePyramid<float> Model::encode(const Tensor4& images) const {
  const auto x = ad::Var<float>::leaf(images, false);
  if (hier_) return hier_->forward(x);
  if (iso_) return iso_->forward(x);
  throw UsageError("a feature-dump model takes precomputed features, not images");
}

HeadOutputs<float> Model::forward(const FeaturePyramid<float>& pyramid, std::size_t input_size) const {
  return decoder_->forward(pyramid, input_size);
}

ParamList<float> Model::encoder_params() const {
  if (hier_) return hier_->params();
  if (iso_) return iso_->params();
  return {};
}

ParamList<float> Model::decoder_params() const { return decoder_->params(); }

NamedTensors Model::state() const {
  NamedTensors out;
  for (const auto& list : {encoder_params(), decoder_params()}) {
    for (const auto& [name, v] : list) out.emplace_back(name, v.value());
  }
  return out;
}

void Model::load_state(const NamedTensors& tensors) {
  std::map<std::string, const Tensor4*> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, &t).second) throw DataError("checkpoint repeats parameter " + name);
  }
  std::size_t used = 0;
  for (const auto& list : {encoder_params(), decoder_params()}) {
    for (auto [name, v] : list) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint lacks parameter " + name);
      if (it->second->shape() != v.shape()) {
        throw DataError("checkpoint parameter " + name + " has shape " + it->second->shape().str() + ", model expects " +
                        v.shape().str());
      }
      v.mutable_value() = *it->second;
      ++used;
    }
  }
  if (used != by_name.size()) throw DataError("checkpoint holds parameters this model does not have");
}

std::vector<PredictedMaps> predict(const Model& model, const FeaturePyramid<float>& pyramid, std::size_t input_size) {
  ad::NoGradGuard no_grad;
  const auto out = model.forward(pyramid, input_size);
  const Tensor4 sm1 = kernels::softmax_channels(out.sm1_logits.value());
  const Tensor4 sm2 = kernels::softmax_channels(out.sm2_logits.value());
  std::vector<PredictedMaps> maps;
  for (std::size_t i = 0; i < sm1.shape().n; ++i) {
    maps.push_back({sm1.batch_slice(i, 1), sm2.batch_slice(i, 1), out.dm.value().batch_slice(i, 1)});
  }
  return maps;
}

}  // namespace cellseg
