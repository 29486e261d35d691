#include "cellseg/encoders.hpp"

#include <string>

namespace cellseg {

Strategy parse_strategy(std::string_view s) {
  if (s == "shallow") return Strategy::kShallow;
  if (s == "deep") return Strategy::kDeep;
  if (s == "mixed") return Strategy::kMixed;
  throw ConfigError("unknown block strategy '" + std::string(s) + "' (shallow|deep|mixed)");
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kShallow: return "shallow";
    case Strategy::kDeep: return "deep";
    case Strategy::kMixed: return "mixed";
  }
  return "?";
}

std::array<std::uint32_t, 4> select_blocks(std::uint32_t n, Strategy strategy) {
  auto need = [&](std::uint32_t min) {
    if (n < min) {
      throw ConfigError(std::string(to_string(strategy)) + " block selection needs at least " + std::to_string(min) +
                        " blocks, got " + std::to_string(n));
    }
  };
  switch (strategy) {
    case Strategy::kShallow:
      need(9);
      return {2, 4, 6, 8};
    case Strategy::kDeep:
      need(8);
      if (n == 40) return {34, 36, 37, 39};
      return {n - 7, n - 5, n - 3, n - 1};
    case Strategy::kMixed:
      // Smallest n keeping 5 < n/2 - 2 < n - 4.
      need(16);
      return {2, 5, n / 2 - 2, n - 4};
  }
  throw ConfigError("unknown block strategy");
}

template <class T>
void FeaturePyramid<T>::validate() const {
  const Shape s0 = levels[0].shape();
  for (std::size_t i = 0; i < 4; ++i) {
    if (!levels[i].defined()) throw ShapeError("pyramid level " + std::to_string(i + 1) + " is missing");
    const Shape s = levels[i].shape();
    if (s.n != s0.n) throw ShapeError("pyramid levels disagree on batch size");
    if (isotropic && s != s0) {
      throw ShapeError("isotropic pyramid levels must share one shape: " + s.str() + " vs " + s0.str());
    }
  }
}

template <class T>
ToyHierarchicalEncoder<T>::ToyHierarchicalEncoder(std::size_t base_channels, std::uint64_t seed) : base_(base_channels) {
  if (base_channels == 0) throw ConfigError("base channel count must be positive");
  std::mt19937_64 rng(seed);
  std::size_t c_in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t c = base_ << i;
    Stage s{make_conv<T>(c_in, c, 3, 2, 1, rng), make_conv<T>(c, c, 3, 1, 1, rng), make_conv<T>(c, c, 3, 1, 1, rng)};
    stages_.push_back(std::move(s));
    c_in = c;
  }
}

template <class T>
FeaturePyramid<T> ToyHierarchicalEncoder<T>::forward(const ad::Var<T>& image) const {
  const Shape s = image.shape();
  if (s.c != 3 || s.h != s.w || s.h % 16 != 0 || s.h == 0) {
    throw ShapeError("hierarchical encoder expects (n,3,H,H) with H divisible by 16, got " + s.str());
  }
  FeaturePyramid<T> p;
  ad::Var<T> x = image;
  for (std::size_t i = 0; i < 4; ++i) {
    const Stage& st = stages_[i];
    x = ad::relu(st.conv2(ad::relu(st.conv1(st.down(x)))));
    p.levels[i] = x;
    p.source_block[i] = static_cast<std::uint32_t>(i);
  }
  p.trainable = stages_[0].down.weight.requires_grad();
  return p;
}

template <class T>
ParamList<T> ToyHierarchicalEncoder<T>::params() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string prefix = "encoder.stage" + std::to_string(i + 1);
    stages_[i].down.append_params(prefix + ".down", out);
    stages_[i].conv1.append_params(prefix + ".conv1", out);
    stages_[i].conv2.append_params(prefix + ".conv2", out);
  }
  return out;
}

template <class T>
std::array<std::size_t, 4> ToyHierarchicalEncoder<T>::channels() const {
  return {base_, base_ * 2, base_ * 4, base_ * 8};
}

template <class T>
ToyIsotropicEncoder<T>::ToyIsotropicEncoder(std::size_t patch_size, std::size_t dim, std::uint32_t n_blocks,
                                            std::array<std::uint32_t, 4> blocks, std::uint64_t seed)
    : patch_(patch_size), dim_(dim), blocks_(blocks) {
  if (patch_size == 0 || dim == 0) throw ConfigError("patch size and embedding width must be positive");
  for (std::size_t i = 0; i < 4; ++i) {
    if (blocks[i] >= n_blocks || (i > 0 && blocks[i] <= blocks[i - 1])) {
      throw ConfigError("block indices must be strictly increasing and below " + std::to_string(n_blocks));
    }
  }
  std::mt19937_64 rng(seed);
  patchify_ = make_conv<T>(3, dim, patch_size, patch_size, 0, rng);
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    Block blk{make_conv<T>(dim, dim, 1, 1, 0, rng), make_conv<T>(dim, dim, 1, 1, 0, rng)};
    blocks_params_.push_back(std::move(blk));
  }
}

template <class T>
FeaturePyramid<T> ToyIsotropicEncoder<T>::forward(const ad::Var<T>& image) const {
  const Shape s = image.shape();
  if (s.c != 3 || s.h % patch_ != 0 || s.w % patch_ != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("isotropic encoder expects (n,3,H,W) divisible by patch size " + std::to_string(patch_) +
                     ", got " + s.str());
  }
  FeaturePyramid<T> p;
  p.isotropic = true;
  p.source_block = blocks_;
  ad::Var<T> x = patchify_(image);
  std::size_t level = 0;
  for (std::uint32_t b = 0; b <= blocks_[3]; ++b) {
    const Block& blk = blocks_params_[b];
    x = ad::add(x, blk.mix2(ad::relu(blk.mix1(x))));
    if (b == blocks_[level]) p.levels[level++] = x;
  }
  p.trainable = patchify_.weight.requires_grad();
  return p;
}

template <class T>
ParamList<T> ToyIsotropicEncoder<T>::params() const {
  ParamList<T> out;
  patchify_.append_params("encoder.patchify", out);
  for (std::size_t b = 0; b < blocks_params_.size(); ++b) {
    const std::string prefix = "encoder.block" + std::to_string(b);
    blocks_params_[b].mix1.append_params(prefix + ".mix1", out);
    blocks_params_[b].mix2.append_params(prefix + ".mix2", out);
  }
  return out;
}

FeaturePyramid<float> pyramid_from_levels(std::span<const FeatureLevel> levels) {
  if (levels.size() != 4) throw ShapeError("a pyramid needs exactly 4 levels");
  FeaturePyramid<float> p;
  p.isotropic = true;
  for (std::size_t i = 0; i < 4; ++i) {
    p.levels[i] = ad::Var<float>::leaf(levels[i].tensor, false);
    p.source_block[i] = levels[i].source_block;
    if (levels[i].tensor.shape() != levels[0].tensor.shape()) p.isotropic = false;
  }
  p.validate();
  return p;
}

FeaturePyramid<float> read_feature_dump(const std::filesystem::path& path) {
  const auto levels = read_fmap(path);
  return pyramid_from_levels(levels);
}

void write_feature_dump(const std::filesystem::path& path, const FeaturePyramid<float>& pyramid) {
  std::vector<FeatureLevel> levels;
  for (std::size_t i = 0; i < 4; ++i) levels.push_back({pyramid.source_block[i], pyramid.levels[i].value()});
  write_fmap(path, levels);
}

FeaturePyramid<float> stack_pyramids(std::span<const FeaturePyramid<float>> parts) {
  if (parts.empty()) throw UsageError("cannot stack an empty list of pyramids");
  FeaturePyramid<float> out = parts.front();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<Tensor4> level;
    for (const auto& p : parts) {
      if (p.source_block != out.source_block) throw DataError("feature dumps disagree on source blocks");
      level.push_back(p.levels[i].value());
    }
    out.levels[i] = ad::Var<float>::leaf(stack_batch<float>(level), false);
  }
  out.trainable = false;
  return out;
}

template struct FeaturePyramid<float>;
template struct FeaturePyramid<double>;
template class ToyHierarchicalEncoder<float>;
template class ToyHierarchicalEncoder<double>;
template class ToyIsotropicEncoder<float>;
template class ToyIsotropicEncoder<double>;

}  // namespace cellseg
