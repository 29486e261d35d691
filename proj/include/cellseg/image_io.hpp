#pragma once

// On-disk images: 8-bit RGB PNG for inputs; 16-bit grayscale PNG for instance
// labels with a `<stem>.types.json` sidecar mapping instance ID to type, e.g.
// {"1":2,"2":1}. Keys are written in ascending numeric order.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cellseg/label_map.hpp"
#include "cellseg/tensor.hpp"

namespace cellseg {

// Interleaved 8-bit RGB.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), data(h * w * 3, 0) {}
  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t ch) { return data[(y * width + x) * 3 + ch]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const { return data[(y * width + x) * 3 + ch]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

RgbImage read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

std::filesystem::path types_sidecar_path(const std::filesystem::path& label_png);
InstanceLabelMap read_label_map(const std::filesystem::path& label_png);
void write_label_map(const std::filesystem::path& label_png, const InstanceLabelMap& map);

// (1, 3, H, W) with values scaled to [0, 1].
Tensor4 image_to_tensor(const RgbImage& image);

}  // namespace cellseg
