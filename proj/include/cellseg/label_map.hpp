#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "cellseg/error.hpp"

namespace cellseg {

// Instance IDs on an H x W grid (0 = background) plus the cell type of every
// instance. Types are 1-based.
struct InstanceLabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;
  std::map<std::uint32_t, std::uint32_t> types;

  InstanceLabelMap() = default;
  InstanceLabelMap(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}

  std::uint32_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }

  std::uint32_t max_label() const;
  // Pixel count per label, indexed by label (entry 0 is background).
  std::vector<std::size_t> areas() const;
  // Sorted distinct nonzero labels.
  std::vector<std::uint32_t> ids() const;

  // Throws DataError unless every nonzero label has a type in [1, n_types]
  // (any positive type when n_types == 0).
  void check_typed(std::uint32_t n_types = 0) const;
  // check_typed plus consecutive IDs 1..K and no stray type entries.
  void validate(std::uint32_t n_types = 0) const;

  friend bool operator==(const InstanceLabelMap&, const InstanceLabelMap&) = default;
};

// Renumbers instances 1..K in raster order of their first pixel; types follow.
InstanceLabelMap renumber_raster(const InstanceLabelMap& m);

}  // namespace cellseg
