#pragma once

// Little-endian binary containers sharing one record layout:
//
//   magic[4]  version:u32=1  n_records:u32
//   per record: [name_len:u32 name[name_len]]  d0:u32 c:u32 h:u32 w:u32  f32[d0? * c * h * w]
//
// FMAP   feature pyramid dump, exactly 4 records, d0 = source block, data c*h*w
// PMAP   predicted maps of one image, 3 records (sm1, sm2, dm probabilities), d0 = 0
// FMCK   checkpoint, named records, d0 = outer dimension, data d0*c*h*w

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cellseg/tensor.hpp"

namespace cellseg {

// One pyramid level as stored on disk; tensor is (1, c, h, w).
struct FeatureLevel {
  std::uint32_t source_block = 0;
  Tensor4 tensor;

  friend bool operator==(const FeatureLevel&, const FeatureLevel&) = default;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor4>>;

std::vector<std::uint8_t> encode_fmap(std::span<const FeatureLevel> levels);
std::vector<FeatureLevel> decode_fmap(std::span<const std::uint8_t> bytes);
void write_fmap(const std::filesystem::path& path, std::span<const FeatureLevel> levels);
std::vector<FeatureLevel> read_fmap(const std::filesystem::path& path);

// sm1, sm2 and dm maps of a single image, each (1, C, H, W).
struct PredictedMaps {
  Tensor4 sm1;
  Tensor4 sm2;
  Tensor4 dm;
};

std::vector<std::uint8_t> encode_pmap(const PredictedMaps& maps);
PredictedMaps decode_pmap(std::span<const std::uint8_t> bytes);
void write_pmap(const std::filesystem::path& path, const PredictedMaps& maps);
PredictedMaps read_pmap(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

// Whole-file helpers. The write goes to a sibling temp file first and is
// renamed into place, so readers never observe a partial file.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace cellseg
