#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cellseg/fmap.hpp"
#include "cellseg/image_io.hpp"
#include "cellseg/label_map.hpp"

namespace cellseg {

enum class Split { kTrain, kVal, kTest };

Split parse_split(const std::string& s);
const char* to_string(Split s);

// Paths are relative to the manifest's directory.
struct ManifestRecord {
  std::string image_path;
  std::string label_path;
  Split split = Split::kTrain;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> of(Split s) const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Line format: `<image_path>\t<label_path>\t<train|val|test>`.
std::string format_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

// Seeded shuffle, then floor(0.7 n) train, floor(0.1 n) val, remainder test.
// Fewer than 10 items is a DataError.
std::vector<Split> split_assignment(std::size_t n, std::uint64_t seed);

// Per-patch pixel counts per type (index t-1), and the expansion rule:
// patches holding a type whose global pixel share is below the median share
// of the types present are repeated min(5, ceil(median / share)) times.
// Returns patch indices, shuffled with the seed.
std::vector<std::size_t> oversample(const std::vector<std::vector<std::size_t>>& type_pixels, std::uint64_t seed);
std::vector<std::size_t> type_pixel_counts(const InstanceLabelMap& gt, std::uint32_t n_types);

enum class Dihedral { kIdentity, kFlipH, kFlipV, kRot90, kRot180, kRot270 };
constexpr int kDihedralCount = 6;

RgbImage transform_image(const RgbImage& img, Dihedral d);
InstanceLabelMap transform_labels(const InstanceLabelMap& gt, Dihedral d);

// Uniformly drawn dihedral transform applied to image and labels alike.
struct Augmented {
  RgbImage image;
  InstanceLabelMap gt;
  Dihedral applied = Dihedral::kIdentity;
};
Augmented augment(const RgbImage& image, const InstanceLabelMap& gt, std::mt19937_64& rng);

// One patch in memory; `features` is filled only for feature-dump runs.
struct LabeledImage {
  std::string id;
  RgbImage image;
  InstanceLabelMap gt;
  std::vector<FeatureLevel> features;
};

std::string record_stem(const ManifestRecord& r);

// Loads every record of a split; fmap_dir, when given, supplies
// `<stem>.fmap` for each patch.
std::vector<LabeledImage> load_split(const std::filesystem::path& manifest_path, Split split,
                                     const std::filesystem::path& fmap_dir = {});

}  // namespace cellseg
