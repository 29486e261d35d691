#include "cellseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cellseg {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (train|val|test)");
}

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<ManifestRecord> DatasetManifest::of(Split s) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out;
  for (const auto& r : m.records) out += r.image_path + "\t" + r.label_path + "\t" + to_string(r.split) + "\n";
  return out;
}

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError("manifest line needs exactly three tab-separated fields", line_start);
    }
    ManifestRecord r{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), Split::kTrain};
    try {
      r.split = parse_split(line.substr(t2 + 1));
    } catch (const ConfigError& e) {
      throw FormatError(e.what(), line_start + t2 + 1);
    }
    if (r.image_path.empty() || r.label_path.empty()) throw FormatError("empty path in manifest", line_start);
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_file_atomic(path, format_manifest(m));
}

std::vector<Split> split_assignment(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw DataError("splitting needs at least 10 patches, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = n * 7 / 10, n_val = n / 10;
  std::vector<Split> out(n, Split::kTest);
  for (std::size_t i = 0; i < n_train; ++i) out[order[i]] = Split::kTrain;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) out[order[i]] = Split::kVal;
  return out;
}

std::vector<std::size_t> type_pixel_counts(const InstanceLabelMap& gt, std::uint32_t n_types) {
  std::vector<std::size_t> counts(n_types, 0);
  for (auto l : gt.labels) {
    if (l == 0) continue;
    const auto t = gt.types.at(l);
    if (t == 0 || t > n_types) throw DataError("instance type " + std::to_string(t) + " out of range");
    ++counts[t - 1];
  }
  return counts;
}

std::vector<std::size_t> oversample(const std::vector<std::vector<std::size_t>>& type_pixels, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (type_pixels.empty()) return out;
  const std::size_t n_types = type_pixels.front().size();
  std::vector<double> total(n_types, 0.0);
  for (const auto& row : type_pixels) {
    if (row.size() != n_types) throw ShapeError("oversample: ragged type count table");
    for (std::size_t t = 0; t < n_types; ++t) total[t] += static_cast<double>(row[t]);
  }
  std::vector<double> present;
  for (double v : total) {
    if (v > 0) present.push_back(v);
  }
  std::vector<std::size_t> reps(n_types, 1);
  if (!present.empty()) {
    std::sort(present.begin(), present.end());
    const std::size_t k = present.size();
    const double median = k % 2 ? present[k / 2] : 0.5 * (present[k / 2 - 1] + present[k / 2]);
    for (std::size_t t = 0; t < n_types; ++t) {
      if (total[t] > 0 && total[t] < median) {
        reps[t] = std::min<std::size_t>(5, static_cast<std::size_t>(std::ceil(median / total[t])));
      }
    }
  }
  for (std::size_t i = 0; i < type_pixels.size(); ++i) {
    std::size_t r = 1;
    for (std::size_t t = 0; t < n_types; ++t) {
      if (type_pixels[i][t] > 0) r = std::max(r, reps[t]);
    }
    out.insert(out.end(), r, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

namespace {

// Source coordinate for output pixel (y, x) of a transformed h x w grid.
// Rotations are counter-clockwise.
struct Mapping {
  std::size_t out_h, out_w;
  std::size_t h, w;
  Dihedral d;

  std::pair<std::size_t, std::size_t> src(std::size_t y, std::size_t x) const {
    switch (d) {
      case Dihedral::kIdentity: return {y, x};
      case Dihedral::kFlipH: return {y, w - 1 - x};
      case Dihedral::kFlipV: return {h - 1 - y, x};
      case Dihedral::kRot90: return {x, w - 1 - y};
      case Dihedral::kRot180: return {h - 1 - y, w - 1 - x};
      case Dihedral::kRot270: return {h - 1 - x, y};
    }
    return {y, x};
  }
};

Mapping mapping(std::size_t h, std::size_t w, Dihedral d) {
  const bool swap = d == Dihedral::kRot90 || d == Dihedral::kRot270;
  return {swap ? w : h, swap ? h : w, h, w, d};
}

}  // namespace

RgbImage transform_image(const RgbImage& img, Dihedral d) {
  const Mapping m = mapping(img.height, img.width, d);
  RgbImage out(m.out_h, m.out_w);
  for (std::size_t y = 0; y < m.out_h; ++y) {
    for (std::size_t x = 0; x < m.out_w; ++x) {
      const auto [sy, sx] = m.src(y, x);
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

InstanceLabelMap transform_labels(const InstanceLabelMap& gt, Dihedral d) {
  const Mapping m = mapping(gt.height, gt.width, d);
  InstanceLabelMap out(m.out_h, m.out_w);
  out.types = gt.types;
  for (std::size_t y = 0; y < m.out_h; ++y) {
    for (std::size_t x = 0; x < m.out_w; ++x) {
      const auto [sy, sx] = m.src(y, x);
      out.at(y, x) = gt.at(sy, sx);
    }
  }
  return out;
}

Augmented augment(const RgbImage& image, const InstanceLabelMap& gt, std::mt19937_64& rng) {
  const auto d = static_cast<Dihedral>(std::uniform_int_distribution<int>(0, kDihedralCount - 1)(rng));
  return {transform_image(image, d), transform_labels(gt, d), d};
}

std::string record_stem(const ManifestRecord& r) { return std::filesystem::path(r.image_path).stem().string(); }

std::vector<LabeledImage> load_split(const std::filesystem::path& manifest_path, Split split,
                                     const std::filesystem::path& fmap_dir) {
  const auto manifest = read_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  std::vector<LabeledImage> out;
  for (const auto& r : manifest.of(split)) {
    LabeledImage li;
    li.id = record_stem(r);
    li.image = read_rgb_png(root / r.image_path);
    li.gt = read_label_map(root / r.label_path);
    if (li.gt.height != li.image.height || li.gt.width != li.image.width) {
      throw DataError("image and label sizes differ for " + r.image_path);
    }
    if (!fmap_dir.empty()) li.features = read_fmap(fmap_dir / (li.id + ".fmap"));
    out.push_back(std::move(li));
  }
  return out;
}

}  // namespace cellseg
