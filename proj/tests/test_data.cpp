#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "cellseg/commands.hpp"
#include "cellseg/dataset.hpp"
#include "cellseg/image_io.hpp"
#include "cellseg/metrics.hpp"
#include "cellseg/synth.hpp"

using namespace cellseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cellseg_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool separated(const InstanceLabelMap& m) {
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      const auto a = m.at(y, x);
      if (a == 0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(m.height) || xx >= static_cast<long>(m.width)) continue;
          const auto b = m.at(yy, xx);
          if (b != 0 && b != a) return false;
        }
      }
    }
  }
  return true;
}

std::map<std::size_t, std::size_t> histogram(const std::vector<std::size_t>& v) {
  std::map<std::size_t, std::size_t> h;
  for (auto i : v) ++h[i];
  return h;
}

// Rim-contact fraction of instance id: rim pixels 8-adjacent to another
// instance over all rim pixels.
double contact(const InstanceLabelMap& m, std::uint32_t id) {
  std::size_t rim = 0, touch = 0;
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (m.at(y, x) != id) continue;
      bool is_rim = false, is_touch = false;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(m.height) || xx >= static_cast<long>(m.width)) continue;
          const auto b = m.at(yy, xx);
          is_rim |= b != id;
          is_touch |= b != 0 && b != id;
        }
      }
      rim += is_rim;
      touch += is_touch;
    }
  }
  return rim ? static_cast<double>(touch) / static_cast<double>(rim) : 0.0;
}

}  // namespace

TEST_CASE("fixed count without touching gives separated instances") {
  SceneSpec s;
  s.min_instances = s.max_instances = 5;
  s.touch_prob = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    const auto scene = generate_scene(s);
    CHECK(scene.gt.ids().size() == 5);
    CHECK(separated(scene.gt));
    CHECK_NOTHROW(scene.gt.validate(5));
    CHECK(scene.image.height == 256);
  }
}

TEST_CASE("scenes are deterministic per seed") {
  SceneSpec s;
  s.size = 64;
  s.seed = 9;
  const auto a = generate_scene(s), b = generate_scene(s);
  CHECK(a.image == b.image);
  CHECK(a.gt == b.gt);
  s.seed = 10;
  CHECK_FALSE(generate_scene(s).image == a.image);
}

TEST_CASE("degenerate type frequencies") {
  SceneSpec s;
  s.type_freq = {1, 0, 0, 0, 0};
  s.seed = 3;
  const auto scene = generate_scene(s);
  REQUIRE_FALSE(scene.gt.types.empty());
  for (const auto& [id, t] : scene.gt.types) CHECK(t == 1);
  s.type_freq = {0.5, 0.5};
  CHECK_THROWS_AS(generate_scene(s), ConfigError);
}

TEST_CASE("generated scenes satisfy the label invariants and contact limit") {
  SceneSpec s;
  s.touch_prob = 0.5;
  s.size = 128;
  s.max_radius = 10;
  std::size_t touching = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    s.seed = seed;
    const auto scene = generate_scene(s);
    CHECK_NOTHROW(scene.gt.validate(s.n_types));
    CHECK(scene.gt.ids().size() <= scene.requested);
    const auto areas = scene.gt.areas();
    for (auto id : scene.gt.ids()) {
      CHECK(areas[id] >= 12);
      const double c = contact(scene.gt, id);
      touching += c > 0;
    }
    // 1 px margin: nothing on the image border
    for (std::size_t i = 0; i < 128; ++i) {
      CHECK(scene.gt.at(0, i) == 0);
      CHECK(scene.gt.at(i, 127) == 0);
    }
  }
  CHECK(touching > 0);
}

TEST_CASE("scene spec validation") {
  SceneSpec s;
  s.min_instances = 9;
  s.max_instances = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.min_radius = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.size = 20;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("split assignment") {
  auto count = [](const std::vector<Split>& v, Split s) { return std::count(v.begin(), v.end(), s); };
  const auto a = split_assignment(100, 5);
  CHECK(count(a, Split::kTrain) == 70);
  CHECK(count(a, Split::kVal) == 10);
  CHECK(count(a, Split::kTest) == 20);
  const auto b = split_assignment(10, 5);
  CHECK(count(b, Split::kTrain) == 7);
  CHECK(count(b, Split::kVal) == 1);
  CHECK(count(b, Split::kTest) == 2);
  CHECK(split_assignment(100, 5) == a);
  CHECK_FALSE(split_assignment(100, 6) == a);
  const auto c = split_assignment(299, 1);
  CHECK(count(c, Split::kTrain) == 209);
  CHECK(count(c, Split::kVal) == 29);
  CHECK(count(c, Split::kTest) == 61);
  CHECK_THROWS_AS(split_assignment(9, 0), DataError);
}

TEST_CASE("oversampling") {
  SUBCASE("balanced classes leave the list unchanged") {
    const std::vector<std::vector<std::size_t>> tp{{50, 0}, {0, 50}, {25, 25}};
    const auto out = oversample(tp, 1);
    CHECK(histogram(out) == std::map<std::size_t, std::size_t>{{0, 1}, {1, 1}, {2, 1}});
  }
  SUBCASE("a class five times rarer than the median is repeated five times") {
    const std::vector<std::vector<std::size_t>> tp{{100, 0, 0}, {0, 100, 0}, {0, 0, 20}};
    CHECK(histogram(oversample(tp, 1)) == std::map<std::size_t, std::size_t>{{0, 1}, {1, 1}, {2, 5}});
  }
  SUBCASE("mixed fixture") {
    // totals 100, 25, 30 -> median 30; type 2 gets ceil(30/25) = 2
    const std::vector<std::vector<std::size_t>> tp{{60, 0, 0}, {40, 10, 0}, {0, 0, 30}, {0, 15, 0}};
    CHECK(histogram(oversample(tp, 3)) == std::map<std::size_t, std::size_t>{{0, 1}, {1, 2}, {2, 1}, {3, 2}});
  }
  SUBCASE("even type count uses the mean of the middle pair, and absent types are ignored") {
    // totals 10, 40, 60, 90, 0 -> median 50; reps 5, 2, 1, 1
    const std::vector<std::vector<std::size_t>> tp{{10, 0, 0, 0, 0}, {0, 40, 0, 0, 0}, {0, 0, 60, 0, 0},
                                                   {0, 0, 0, 90, 0}, {0, 0, 0, 0, 0}};
    CHECK(histogram(oversample(tp, 3)) ==
          std::map<std::size_t, std::size_t>{{0, 5}, {1, 2}, {2, 1}, {3, 1}, {4, 1}});
  }
  SUBCASE("the cap is five") {
    const std::vector<std::vector<std::size_t>> tp{{1, 0, 0}, {0, 100, 0}, {0, 0, 100}};
    CHECK(histogram(oversample(tp, 3))[0] == 5);
  }
  SUBCASE("order is a seeded shuffle") {
    const std::vector<std::vector<std::size_t>> tp{{100, 0, 0}, {0, 100, 0}, {0, 0, 20}, {1, 1, 1}};
    CHECK(oversample(tp, 4) == oversample(tp, 4));
  }
}

TEST_CASE("type pixel counts") {
  InstanceLabelMap m(2, 3);
  m.labels = {1, 1, 0, 2, 0, 3};
  m.types = {{1, 2}, {2, 1}, {3, 2}};
  CHECK(type_pixel_counts(m, 3) == std::vector<std::size_t>{1, 3, 0});
  m.types[3] = 4;
  CHECK_THROWS_AS(type_pixel_counts(m, 3), DataError);
}

TEST_CASE("dihedral transforms") {
  InstanceLabelMap m(2, 2);
  m.labels = {1, 2, 3, 4};
  m.types = {{1, 1}, {2, 1}, {3, 1}, {4, 1}};
  CHECK(transform_labels(m, Dihedral::kRot90).labels == std::vector<std::uint32_t>{2, 4, 1, 3});
  CHECK(transform_labels(m, Dihedral::kRot270).labels == std::vector<std::uint32_t>{3, 1, 4, 2});
  CHECK(transform_labels(m, Dihedral::kFlipH).labels == std::vector<std::uint32_t>{2, 1, 4, 3});
  CHECK(transform_labels(m, Dihedral::kFlipV).labels == std::vector<std::uint32_t>{3, 4, 1, 2});

  InstanceLabelMap r(3, 5);
  for (std::size_t i = 0; i < 15; ++i) r.labels[i] = static_cast<std::uint32_t>(i % 4);
  r.types = {{1, 1}, {2, 2}, {3, 1}};
  const auto r90 = transform_labels(r, Dihedral::kRot90);
  CHECK(r90.height == 5);
  CHECK(r90.width == 3);
  CHECK(transform_labels(r90, Dihedral::kRot270) == r);
  CHECK(transform_labels(transform_labels(r, Dihedral::kRot180), Dihedral::kRot180) == r);
  CHECK(transform_labels(transform_labels(r, Dihedral::kFlipH), Dihedral::kFlipH) == r);

  SceneSpec s;
  s.size = 64;
  s.seed = 4;
  const auto scene = generate_scene(s);
  for (int k = 0; k < kDihedralCount; ++k) {
    const auto d = static_cast<Dihedral>(k);
    const auto t = transform_labels(scene.gt, d);
    CHECK(t.areas() == scene.gt.areas());
    CHECK(image_metrics(match_instances(t, t)).pq == 1.0);
    // image and labels move together: encode labels into the red channel
    RgbImage img(64, 64);
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) img.at(y, x, 0) = static_cast<std::uint8_t>(scene.gt.at(y, x));
    }
    const auto ti = transform_image(img, d);
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) CHECK(ti.at(y, x, 0) == t.at(y, x));
    }
  }

  std::mt19937_64 rng(1);
  std::map<Dihedral, int> seen;
  for (int i = 0; i < 300; ++i) {
    const auto a = augment(scene.image, scene.gt, rng);
    ++seen[a.applied];
    if (i < 10) CHECK(a.gt == transform_labels(scene.gt, a.applied));
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("manifest round trip") {
  DatasetManifest m{{{"images/a.png", "labels/a.png", Split::kTrain},
                     {"images/b.png", "labels/b.png", Split::kVal},
                     {"images/c.png", "labels/c.png", Split::kTest}}};
  const auto text = format_manifest(m);
  CHECK(text == "images/a.png\tlabels/a.png\ttrain\nimages/b.png\tlabels/b.png\tval\nimages/c.png\tlabels/c.png\ttest\n");
  CHECK(parse_manifest(text) == m);
  TempDir dir("manifest");
  write_manifest(dir.path / "m.tsv", m);
  CHECK(read_manifest(dir.path / "m.tsv") == m);
  CHECK(m.of(Split::kVal).size() == 1);
  CHECK(record_stem(m.records[2]) == "c");

  CHECK_THROWS_AS(parse_manifest("a.png\tb.png\n"), FormatError);
  CHECK_THROWS_AS(parse_manifest("a.png\tb.png\tholdout\n"), FormatError);
  CHECK_THROWS_AS(parse_split("dev"), ConfigError);
}

TEST_CASE("png label maps and sidecars round trip") {
  TempDir dir("png");
  InstanceLabelMap m(3, 4);
  m.labels = {0, 1, 1, 0, 2, 2, 0, 300, 0, 0, 300, 300};
  m.types = {{1, 2}, {2, 1}, {300, 5}};
  write_label_map(dir.path / "x.png", m);
  CHECK(fs::exists(dir.path / "x.types.json"));
  std::ifstream side(dir.path / "x.types.json");
  std::string text((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
  CHECK(text == "{\"1\":2,\"2\":1,\"300\":5}\n");
  CHECK(read_label_map(dir.path / "x.png") == m);

  RgbImage img(5, 7);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<std::uint8_t>(i * 37);
  write_rgb_png(dir.path / "img.png", img);
  CHECK(read_rgb_png(dir.path / "img.png") == img);
  const auto t = image_to_tensor(img);
  CHECK(t.shape() == Shape{1, 3, 5, 7});
  CHECK(t.at(0, 1, 0, 0) == doctest::Approx(37.0 / 255));

  InstanceLabelMap big(1, 2);
  big.labels = {70000, 0};
  big.types = {{70000, 1}};
  CHECK_THROWS_AS(write_label_map(dir.path / "big.png", big), DataError);

  {
    std::ofstream bad(dir.path / "x.types.json");
    bad << "{\"1\":2}\n";
  }
  CHECK_THROWS_AS(read_label_map(dir.path / "x.png"), DataError);
  CHECK_THROWS_AS(read_rgb_png(dir.path / "missing.png"), IoError);
  {
    std::ofstream junk(dir.path / "junk.png");
    junk << "not a png";
  }
  CHECK_THROWS(read_rgb_png(dir.path / "junk.png"));
}

TEST_CASE("gen-synth writes a loadable dataset") {
  TempDir dir("synth");
  GenSynthOptions opt;
  opt.out_dir = dir.path / "ds";
  opt.count = 12;
  opt.scene.size = 32;
  opt.scene.min_radius = 3;
  opt.scene.max_radius = 6;
  opt.scene.min_instances = 2;
  opt.scene.max_instances = 4;
  opt.seed = 5;
  const auto manifest = cmd_gen_synth(opt);
  const auto train = load_split(manifest, Split::kTrain);
  const auto val = load_split(manifest, Split::kVal);
  const auto test = load_split(manifest, Split::kTest);
  CHECK(train.size() == 8);
  CHECK(val.size() == 1);
  CHECK(test.size() == 3);
  for (const auto& li : train) {
    CHECK(li.image.height == 32);
    CHECK_NOTHROW(li.gt.validate(opt.scene.n_types));
  }

  // same seed, same bytes
  opt.out_dir = dir.path / "ds2";
  cmd_gen_synth(opt);
  for (const auto& e : fs::directory_iterator(dir.path / "ds" / "labels")) {
    CHECK(read_file_bytes(e.path()) == read_file_bytes(dir.path / "ds2" / "labels" / e.path().filename()));
  }
  CHECK(read_file_bytes(dir.path / "ds" / "manifest.tsv") == read_file_bytes(dir.path / "ds2" / "manifest.tsv"));
}
