#pragma once

#include <memory>
#include <string_view>

#include "cellseg/decoder.hpp"
#include "cellseg/fmap.hpp"

namespace cellseg {

enum class EncoderKind { kHierarchical, kIsotropic, kDump };

EncoderKind parse_encoder_kind(std::string_view s);
const char* to_string(EncoderKind k);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kHierarchical;
  std::size_t base_channels = 16;  // hierarchical
  std::size_t patch_size = 16;     // isotropic
  std::size_t embed_dim = 64;      // isotropic
  std::uint32_t n_blocks = 12;     // isotropic
  Strategy strategy = Strategy::kShallow;
  std::array<std::size_t, 4> dump_channels{};  // dump: channels per level
  DecoderConfig decoder;
  std::uint64_t seed = 0;
};

// Frozen encoder plus trainable decoder. The encoder's parameters never
// require gradients, so its forward pass records no tape.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  bool uses_dumps() const { return cfg_.encoder == EncoderKind::kDump; }

  // Images (n, 3, H, W) in [0, 1]; not available for dump models.
  FeaturePyramid<float> encode(const Tensor4& images) const;
  HeadOutputs<float> forward(const FeaturePyramid<float>& pyramid, std::size_t input_size) const;

  ParamList<float> encoder_params() const;
  ParamList<float> decoder_params() const;

  // Every parameter by name, encoder first.
  NamedTensors state() const;
  // Requires exactly the names and shapes of state().
  void load_state(const NamedTensors& tensors);

 private:
  ModelConfig cfg_;
  std::unique_ptr<ToyHierarchicalEncoder<float>> hier_;
  std::unique_ptr<ToyIsotropicEncoder<float>> iso_;
  std::unique_ptr<Decoder<float>> decoder_;
};

// Softmax / sigmoid maps for every batch item, split into batch-1 records.
std::vector<PredictedMaps> predict(const Model& model, const FeaturePyramid<float>& pyramid, std::size_t input_size);

}  // namespace cellseg
