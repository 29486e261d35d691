#pragma once

#include <cstdint>
#include <vector>

#include "cellseg/image_io.hpp"
#include "cellseg/label_map.hpp"

namespace cellseg {

struct SceneSpec {
  std::size_t size = 256;
  std::size_t min_instances = 8;
  std::size_t max_instances = 20;
  double min_radius = 6.0;
  double max_radius = 14.0;
  std::uint32_t n_types = 5;
  std::vector<double> type_freq;  // empty = uniform
  double touch_prob = 0.2;
  double noise = 0.04;  // gaussian sd as a fraction of full scale
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  RgbImage image;
  InstanceLabelMap gt;
  std::size_t requested = 0;  // instance count drawn before placement
};

// Ellipses with type-dependent colour and a darker rim on a noisy
// background. Unless placed to touch, every instance keeps at least one
// background pixel (8-neighbourhood) from all others. Touching instances
// share at most a quarter of their rim. Placement that fails after bounded
// retries drops the instance, so gt may hold fewer than `requested`.
Scene generate_scene(const SceneSpec& spec);

}  // namespace cellseg
