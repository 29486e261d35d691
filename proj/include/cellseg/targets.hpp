#pragma once

#include <cstdint>

#include "cellseg/label_map.hpp"
#include "cellseg/tensor.hpp"

namespace cellseg {

// Training targets of one image, each (1, C, H, W):
//   sm1  one-hot over {background, body, boundary}
//   sm2  one-hot over {background, type 1..T}
//   dm   chord distances (left, right, up, down) / dmax, zero on background
struct TargetBundle {
  Tensor4 sm1;
  Tensor4 sm2;
  Tensor4 dm;
};

enum Sm1Class : std::uint32_t { kBackground = 0, kBody = 1, kBoundary = 2 };

// A boundary pixel is an instance pixel with an 8-neighbour (inside the image)
// carrying a different label, background included. Distances count pixels of
// the same instance along the row/column run through p, p included, clipped
// at dmax.
TargetBundle make_targets(const InstanceLabelMap& gt, std::uint32_t n_types, std::uint32_t dmax = 64);

struct PostprocParams {
  std::size_t min_seed_area = 10;
  double r_max = 32.0;
  double dmax = 64.0;
};

// Turns predicted maps (each (1, C, H, W); sm1/sm2 as probabilities, dm in
// [0, 1]) into an instance map with per-instance types:
//   1. class = argmax sm1
//   2. seeds = 4-connected body components of at least min_seed_area pixels
//   3. every other foreground pixel votes for the seed whose centroid is
//      nearest its dm-implied centre, if within r_max
//   4. leftovers take the majority label of their 8 neighbours, repeated
//      synchronously to a fixpoint (ties to the lowest label)
//   5. instances renumbered in raster order
//   6. type = most frequent non-background argmax of sm2 over the instance;
//      ties to the larger mean probability, then the lower type
InstanceLabelMap postprocess(const Tensor4& sm1_probs, const Tensor4& sm2_probs, const Tensor4& dm,
                             const PostprocParams& params = {});

// argmax over channels of a (1, C, H, W) tensor; ties to the lower channel.
std::vector<std::uint32_t> argmax_channels(const Tensor4& t);

}  // namespace cellseg
