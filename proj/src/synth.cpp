#include "cellseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

namespace cellseg {

void SceneSpec::validate() const {
  if (size < 16) throw ConfigError("scene size must be at least 16");
  if (min_instances > max_instances) throw ConfigError("instance count range is inverted");
  if (!(min_radius >= 2 && max_radius >= min_radius)) throw ConfigError("radii must satisfy 2 <= min <= max");
  if (2 * max_radius + 4 > static_cast<double>(size)) throw ConfigError("max radius does not fit the scene");
  if (n_types < 1) throw ConfigError("number of cell types must be at least 1");
  if (!(touch_prob >= 0 && touch_prob <= 1)) throw ConfigError("touch probability must lie in [0, 1]");
  if (!(noise >= 0)) throw ConfigError("noise level must be non-negative");
  if (!type_freq.empty()) {
    if (type_freq.size() != n_types) throw ConfigError("type frequency vector must have one entry per type");
    double s = 0;
    for (double f : type_freq) {
      if (!(f >= 0)) throw ConfigError("type frequencies must be non-negative");
      s += f;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ConfigError("type frequencies must sum to 1");
  }
}

namespace {

constexpr int kRetries = 200;

struct Ellipse {
  double cy, cx, a, b, theta;
};

// Pixels inside the ellipse; empty when it leaves the image (1 px margin).
std::vector<std::size_t> rasterize(const Ellipse& e, std::size_t size) {
  const double r = std::max(e.a, e.b);
  const double lo_y = std::floor(e.cy - r), hi_y = std::ceil(e.cy + r);
  const double lo_x = std::floor(e.cx - r), hi_x = std::ceil(e.cx + r);
  if (lo_y < 1 || lo_x < 1 || hi_y > static_cast<double>(size) - 2 || hi_x > static_cast<double>(size) - 2) return {};
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  std::vector<std::size_t> px;
  for (auto y = static_cast<std::size_t>(lo_y); y <= static_cast<std::size_t>(hi_y); ++y) {
    for (auto x = static_cast<std::size_t>(lo_x); x <= static_cast<std::size_t>(hi_x); ++x) {
      const double dy = static_cast<double>(y) - e.cy, dx = static_cast<double>(x) - e.cx;
      const double u = (dx * c + dy * s) / e.a, v = (-dx * s + dy * c) / e.b;
      if (u * u + v * v <= 1.0) px.push_back(y * size + x);
    }
  }
  return px;
}

template <class F>
void for_neighbours8(std::size_t p, std::size_t size, F&& f) {
  const std::size_t y = p / size, x = p % size;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
      if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(size) || xx >= static_cast<std::ptrdiff_t>(size)) continue;
      f(static_cast<std::size_t>(yy) * size + static_cast<std::size_t>(xx));
    }
  }
}

bool overlaps(const std::vector<std::size_t>& px, const InstanceLabelMap& m) {
  return std::any_of(px.begin(), px.end(), [&](std::size_t p) { return m.labels[p] != 0; });
}

// Fraction of the candidate's rim pixels that are 8-adjacent to another
// instance. 0 means separated by at least one background pixel.
double contact_fraction(const std::vector<std::size_t>& px, const InstanceLabelMap& m, std::vector<std::uint8_t>& mask) {
  for (auto p : px) mask[p] = 1;
  std::size_t rim = 0, touching = 0;
  for (auto p : px) {
    bool is_rim = false, is_touch = false;
    for_neighbours8(p, m.width, [&](std::size_t q) {
      if (!mask[q]) is_rim = true;
      if (m.labels[q] != 0) is_touch = true;
    });
    rim += is_rim;
    touching += is_touch;
  }
  for (auto p : px) mask[p] = 0;
  return rim ? static_cast<double>(touching) / static_cast<double>(rim) : 1.0;
}

// Base colours (RGB, 0..1) per type, cycling for large T.
std::array<double, 3> type_colour(std::uint32_t t) {
  static constexpr std::array<std::array<double, 3>, 6> kPalette{{{0.35, 0.15, 0.55},
                                                                  {0.15, 0.25, 0.60},
                                                                  {0.55, 0.20, 0.35},
                                                                  {0.20, 0.45, 0.45},
                                                                  {0.50, 0.40, 0.15},
                                                                  {0.30, 0.30, 0.30}}};
  auto c = kPalette[(t - 1) % kPalette.size()];
  const double shade = 1.0 - 0.15 * static_cast<double>((t - 1) / kPalette.size());
  for (auto& v : c) v *= shade;
  return c;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t n = spec.size;
  Scene scene;
  scene.gt = InstanceLabelMap(n, n);
  InstanceLabelMap& gt = scene.gt;

  std::uniform_int_distribution<std::size_t> count_d(spec.min_instances, spec.max_instances);
  scene.requested = count_d(rng);
  std::vector<double> freq = spec.type_freq;
  if (freq.empty()) freq.assign(spec.n_types, 1.0);
  std::discrete_distribution<std::uint32_t> type_d(freq.begin(), freq.end());
  std::uniform_real_distribution<double> radius_d(spec.min_radius, spec.max_radius);
  std::uniform_real_distribution<double> angle_d(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution touch_d(spec.touch_prob);

  std::vector<Ellipse> placed;
  std::vector<std::uint8_t> scratch(n * n, 0);
  for (std::size_t k = 0; k < scene.requested; ++k) {
    const std::uint32_t type = type_d(rng) + 1;
    const bool touch = !placed.empty() && touch_d(rng);
    for (int attempt = 0; attempt < kRetries; ++attempt) {
      Ellipse e{0, 0, radius_d(rng), radius_d(rng), angle_d(rng)};
      // Keep eccentricity moderate.
      if (std::max(e.a, e.b) > 2.0 * std::min(e.a, e.b)) continue;
      std::vector<std::size_t> px;
      if (touch) {
        // Slide outward from a random neighbour until the first free position.
        const Ellipse& host = placed[std::uniform_int_distribution<std::size_t>(0, placed.size() - 1)(rng)];
        const double phi = 2.0 * std::numbers::pi * unit(rng);
        for (double d = 0.5 * (host.a + e.a); d < 3.0 * (std::max(host.a, host.b) + std::max(e.a, e.b)); d += 0.5) {
          e.cy = host.cy + d * std::sin(phi);
          e.cx = host.cx + d * std::cos(phi);
          px = rasterize(e, n);
          if (px.empty()) break;
          if (!overlaps(px, gt)) break;
        }
        if (px.empty() || overlaps(px, gt)) continue;
        const double f = contact_fraction(px, gt, scratch);
        if (f == 0.0 || f > 0.25) continue;
      } else {
        e.cy = unit(rng) * static_cast<double>(n);
        e.cx = unit(rng) * static_cast<double>(n);
        px = rasterize(e, n);
        if (px.empty() || contact_fraction(px, gt, scratch) != 0.0 || overlaps(px, gt)) continue;
      }
      if (px.size() < 12) continue;
      const auto id = static_cast<std::uint32_t>(placed.size() + 1);
      for (auto p : px) gt.labels[p] = id;
      gt.types[id] = type;
      placed.push_back(e);
      break;
    }
  }

  // Render: noisy background, flat type colour inside, darker rim.
  scene.image = RgbImage(n, n);
  std::normal_distribution<double> noise_d(0.0, spec.noise);
  static constexpr std::array<double, 3> kBackground{0.92, 0.80, 0.88};
  for (std::size_t p = 0; p < n * n; ++p) {
    const auto l = gt.labels[p];
    std::array<double, 3> c = kBackground;
    if (l != 0) {
      c = type_colour(gt.types.at(l));
      bool rim = false;
      for_neighbours8(p, n, [&](std::size_t q) { rim = rim || gt.labels[q] != l; });
      if (rim) {
        for (auto& v : c) v *= 0.6;
      }
    }
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(c[ch] + noise_d(rng), 0.0, 1.0);
      scene.image.data[p * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return scene;
}

}  // namespace cellseg
