#include "cellseg/targets.hpp"

#include <algorithm>
#include <string>

namespace cellseg {

TargetBundle make_targets(const InstanceLabelMap& gt, std::uint32_t n_types, std::uint32_t dmax) {
  if (n_types < 1) throw ConfigError("number of cell types must be at least 1");
  if (dmax < 1) throw ConfigError("dmax must be positive");
  gt.check_typed(n_types);
  const std::size_t h = gt.height, w = gt.width;
  TargetBundle t{Tensor4(Shape{1, 3, h, w}), Tensor4(Shape{1, n_types + 1u, h, w}), Tensor4(Shape{1, 4, h, w})};
  const float inv = 1.0f / static_cast<float>(dmax);
  auto scaled = [&](std::size_t run) { return static_cast<float>(std::min<std::size_t>(run, dmax)) * inv; };

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto l = gt.at(y, x);
      if (l == 0) {
        t.sm1.at(0, kBackground, y, x) = 1.0f;
        t.sm2.at(0, 0, y, x) = 1.0f;
        continue;
      }
      bool boundary = false;
      for (int dy = -1; dy <= 1 && !boundary; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
          if ((dy == 0 && dx == 0) || yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
              xx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          if (gt.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) != l) {
            boundary = true;
            break;
          }
        }
      }
      t.sm1.at(0, boundary ? kBoundary : kBody, y, x) = 1.0f;
      t.sm2.at(0, gt.types.at(l), y, x) = 1.0f;

      std::size_t left = 1, right = 1, up = 1, down = 1;
      while (x >= left && gt.at(y, x - left) == l) ++left;
      while (x + right < w && gt.at(y, x + right) == l) ++right;
      while (y >= up && gt.at(y - up, x) == l) ++up;
      while (y + down < h && gt.at(y + down, x) == l) ++down;
      t.dm.at(0, 0, y, x) = scaled(left);
      t.dm.at(0, 1, y, x) = scaled(right);
      t.dm.at(0, 2, y, x) = scaled(up);
      t.dm.at(0, 3, y, x) = scaled(down);
    }
  }
  return t;
}

}  // namespace cellseg
