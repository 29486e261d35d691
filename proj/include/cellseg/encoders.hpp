#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cellseg/fmap.hpp"
#include "cellseg/layers.hpp"

namespace cellseg {

enum class Strategy { kShallow, kDeep, kMixed };

Strategy parse_strategy(std::string_view s);
const char* to_string(Strategy s);

// Four strictly increasing 0-based block indices feeding the skips.
//   shallow: (2, 4, 6, 8)
//   deep:    (n-7, n-5, n-3, n-1); n = 40 uses (34, 36, 37, 39)
//   mixed:   (2, 5, n/2 - 2, n - 4)
std::array<std::uint32_t, 4> select_blocks(std::uint32_t n_blocks, Strategy strategy);

// Four feature levels, shallowest first. Each level is (n, c, h, w).
template <class T>
struct FeaturePyramid {
  std::array<ad::Var<T>, 4> levels;
  std::array<std::uint32_t, 4> source_block{};
  bool isotropic = false;
  bool trainable = false;

  // Throws ShapeError on a batch mismatch or, for isotropic pyramids, unequal
  // level shapes.
  void validate() const;
};

// Conv stages [stride-2 conv, 2 x (conv3x3 + relu)]; stage i has base * 2^(i-1)
// channels at 1/2^i resolution.
template <class T>
class ToyHierarchicalEncoder {
 public:
  ToyHierarchicalEncoder(std::size_t base_channels, std::uint64_t seed);

  FeaturePyramid<T> forward(const ad::Var<T>& image) const;
  ParamList<T> params() const;
  std::array<std::size_t, 4> channels() const;

 private:
  struct Stage {
    Conv<T> down, conv1, conv2;
  };
  std::size_t base_;
  std::vector<Stage> stages_;
};

// Patchify by a stride-p convolution to `dim` channels, then n_blocks of
// residual per-token mixing x + W2 relu(W1 x). Emits the outputs of the four
// selected blocks, all at the patch-grid resolution.
template <class T>
class ToyIsotropicEncoder {
 public:
  ToyIsotropicEncoder(std::size_t patch_size, std::size_t dim, std::uint32_t n_blocks,
                      std::array<std::uint32_t, 4> blocks, std::uint64_t seed);

  FeaturePyramid<T> forward(const ad::Var<T>& image) const;
  ParamList<T> params() const;
  std::array<std::size_t, 4> channels() const { return {dim_, dim_, dim_, dim_}; }
  const std::array<std::uint32_t, 4>& blocks() const { return blocks_; }

 private:
  struct Block {
    Conv<T> mix1, mix2;
  };
  std::size_t patch_;
  std::size_t dim_;
  std::array<std::uint32_t, 4> blocks_;
  Conv<T> patchify_;
  std::vector<Block> blocks_params_;
};

// Pyramid of exported features, non-trainable. Every level is (1, c, h, w).
FeaturePyramid<float> read_feature_dump(const std::filesystem::path& path);
FeaturePyramid<float> pyramid_from_levels(std::span<const FeatureLevel> levels);
// Batch-1 pyramid to disk.
void write_feature_dump(const std::filesystem::path& path, const FeaturePyramid<float>& pyramid);
// Concatenates batch-1 dump pyramids along the batch axis.
FeaturePyramid<float> stack_pyramids(std::span<const FeaturePyramid<float>> parts);

}  // namespace cellseg
