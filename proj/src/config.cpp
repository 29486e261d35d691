#include "cellseg/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "cellseg/fmap.hpp"

namespace cellseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean (true|false)");
}

kernels::Upsample to_upsample(const std::string& key, const std::string& v) {
  if (v == "nearest") return kernels::Upsample::kNearest;
  if (v == "bilinear") return kernels::Upsample::kBilinear;
  throw ConfigError(key + ": '" + v + "' is not an upsampling mode (nearest|bilinear)");
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(kernels::Upsample m) { return m == kernels::Upsample::kNearest ? "nearest" : "bilinear"; }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  if (v.empty()) return {};
  std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

struct Accessor {
  std::function<void(RunConfig&, const std::string&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class F>
Accessor dbl(F field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
            field(c) = to_double(k, v);
          },
          [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }};
}

template <class F>
Accessor uint(F field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(to_uint(k, v));
          },
          [field](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(field(const_cast<RunConfig&>(c)))); }};
}

template <class F>
Accessor boolean(F field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
            field(c) = to_bool(k, v);
          },
          [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }};
}

template <class F>
Accessor upsample(F field) {
  return {[field](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
            field(c) = to_upsample(k, v);
          },
          [field](const RunConfig& c) { return fmt(field(const_cast<RunConfig&>(c))); }};
}

template <class F>
Accessor path(F field) {
  return {[field](RunConfig& c, const std::string&, const std::string& v, const std::filesystem::path& base) {
            field(c) = resolve(base, v);
          },
          [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)).string(); }};
}

const std::map<std::string, Accessor>& accessors() {
  static const std::map<std::string, Accessor> table = [] {
    std::map<std::string, Accessor> t;
    t["encoder"] = {[](RunConfig& c, const std::string&, const std::string& v, const std::filesystem::path&) {
                      c.model.encoder = parse_encoder_kind(v);
                    },
                    [](const RunConfig& c) { return std::string(to_string(c.model.encoder)); }};
    t["strategy"] = {[](RunConfig& c, const std::string&, const std::string& v, const std::filesystem::path&) {
                       c.model.strategy = parse_strategy(v);
                     },
                     [](const RunConfig& c) { return std::string(to_string(c.model.strategy)); }};
    t["base_channels"] = uint([](RunConfig& c) -> auto& { return c.model.base_channels; });
    t["patch_size"] = uint([](RunConfig& c) -> auto& { return c.model.patch_size; });
    t["embed_dim"] = uint([](RunConfig& c) -> auto& { return c.model.embed_dim; });
    t["n_blocks"] = uint([](RunConfig& c) -> auto& { return c.model.n_blocks; });
    t["n_types"] = {[](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
                      const auto n = static_cast<std::uint32_t>(to_uint(k, v));
                      c.model.decoder.n_types = n;
                      c.train.n_types = n;
                    },
                    [](const RunConfig& c) { return fmt(std::uint64_t{c.train.n_types}); }};
    t["input_size"] = uint([](RunConfig& c) -> auto& { return c.model.decoder.input_size; });
    t["skip_upsample"] = upsample([](RunConfig& c) -> auto& { return c.model.decoder.skip_upsample; });
    t["body_upsample"] = upsample([](RunConfig& c) -> auto& { return c.model.decoder.body_upsample; });
    t["w_ce1"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.w_ce1; });
    t["w_dice"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.w_dice; });
    t["w_mae"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.w_mae; });
    t["w_ce2"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.w_ce2; });
    t["w_tversky"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.w_tversky; });
    t["tversky_alpha"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.tversky_alpha; });
    t["tversky_beta"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.tversky_beta; });
    t["dice_smooth"] = dbl([](RunConfig& c) -> auto& { return c.train.loss.dice_smooth; });
    t["epochs"] = uint([](RunConfig& c) -> auto& { return c.train.epochs; });
    t["batch_size"] = uint([](RunConfig& c) -> auto& { return c.train.batch_size; });
    t["peak_lr"] = dbl([](RunConfig& c) -> auto& { return c.train.peak_lr; });
    t["final_lr"] = dbl([](RunConfig& c) -> auto& { return c.train.final_lr; });
    t["pct_up"] = dbl([](RunConfig& c) -> auto& { return c.train.pct_up; });
    t["div_start"] = dbl([](RunConfig& c) -> auto& { return c.train.div_start; });
    t["beta1"] = dbl([](RunConfig& c) -> auto& { return c.train.adamw.beta1; });
    t["beta2"] = dbl([](RunConfig& c) -> auto& { return c.train.adamw.beta2; });
    t["eps"] = dbl([](RunConfig& c) -> auto& { return c.train.adamw.eps; });
    t["weight_decay"] = dbl([](RunConfig& c) -> auto& { return c.train.adamw.weight_decay; });
    t["augment"] = boolean([](RunConfig& c) -> auto& { return c.train.augment; });
    t["oversample"] = boolean([](RunConfig& c) -> auto& { return c.train.oversample; });
    t["min_seed_area"] = uint([](RunConfig& c) -> auto& { return c.post.min_seed_area; });
    t["r_max"] = dbl([](RunConfig& c) -> auto& { return c.post.r_max; });
    t["dmax"] = {[](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
                   const auto d = static_cast<std::uint32_t>(to_uint(k, v));
                   c.train.dmax = d;
                   c.post.dmax = d;
                 },
                 [](const RunConfig& c) { return fmt(std::uint64_t{c.train.dmax}); }};
    t["manifest"] = path([](RunConfig& c) -> auto& { return c.manifest; });
    t["fmap_dir"] = path([](RunConfig& c) -> auto& { return c.fmap_dir; });
    t["out_dir"] = path([](RunConfig& c) -> auto& { return c.out_dir; });
    t["threads"] = uint([](RunConfig& c) -> auto& { return c.threads; });
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v, const std::filesystem::path&) {
                   c.seed = to_uint(k, v);
                   c.model.seed = c.seed;
                   c.train.seed = c.seed;
                 },
                 [](const RunConfig& c) { return fmt(c.seed); }};
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k{
      {"encoder", "hierarchical | isotropic | dump"},
      {"strategy", "isotropic block selection: shallow | deep | mixed"},
      {"base_channels", "hierarchical encoder width of level 1"},
      {"patch_size", "isotropic encoder patch size"},
      {"embed_dim", "isotropic encoder token width"},
      {"n_blocks", "isotropic encoder depth"},
      {"n_types", "number of cell types T"},
      {"input_size", "patch side length in pixels"},
      {"skip_upsample", "upsampling in skip projections: nearest | bilinear"},
      {"body_upsample", "upsampling in the decoder body: nearest | bilinear"},
      {"w_ce1", "weight of sm1 cross-entropy"},
      {"w_dice", "weight of sm1 dice loss"},
      {"w_mae", "weight of dm mean absolute error"},
      {"w_ce2", "weight of sm2 cross-entropy"},
      {"w_tversky", "weight of sm2 tversky loss"},
      {"tversky_alpha", "tversky weight on false positives"},
      {"tversky_beta", "tversky weight on false negatives"},
      {"dice_smooth", "smoothing term of dice and tversky"},
      {"epochs", "training epochs"},
      {"batch_size", "patches per optimizer step"},
      {"peak_lr", "one-cycle peak learning rate"},
      {"final_lr", "one-cycle final learning rate"},
      {"pct_up", "fraction of steps spent warming up"},
      {"div_start", "initial rate is peak_lr / div_start"},
      {"beta1", "adamw first-moment decay"},
      {"beta2", "adamw second-moment decay"},
      {"eps", "adamw denominator epsilon"},
      {"weight_decay", "adamw decoupled weight decay"},
      {"augment", "random flips and right-angle rotations"},
      {"oversample", "repeat patches holding rare types"},
      {"min_seed_area", "smallest body component kept as a seed (pixels)"},
      {"r_max", "largest seed distance for centre voting (pixels)"},
      {"dmax", "distance-map clipping and scale (pixels)"},
      {"manifest", "dataset manifest.tsv"},
      {"fmap_dir", "directory of <stem>.fmap feature dumps (encoder = dump)"},
      {"out_dir", "training output directory"},
      {"threads", "OpenMP threads, 0 = runtime default"},
      {"seed", "seed for initialization, shuffling and augmentation"},
  };
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value, const std::filesystem::path& base_dir) {
  const auto& table = accessors();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value, base_dir);
}

std::string RunConfig::get(const std::string& key) const {
  const auto& table = accessors();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + get(k.name) + "\n";
  return out;
}

void RunConfig::validate() const {
  model.decoder.validate();
  train.validate();
  if (train.n_types != model.decoder.n_types) throw ConfigError("n_types disagrees between model and training");
  if (model.encoder == EncoderKind::kIsotropic) {
    select_blocks(model.n_blocks, model.strategy);
    if (model.patch_size == 0 || model.decoder.input_size % model.patch_size != 0) {
      throw ConfigError("patch_size must divide input_size");
    }
  }
  if (model.encoder == EncoderKind::kHierarchical && model.decoder.input_size % 16 != 0) {
    throw ConfigError("input_size must be divisible by 16 for the hierarchical encoder");
  }
  if (post.min_seed_area == 0) throw ConfigError("min_seed_area must be positive");
  if (!(post.r_max > 0)) throw ConfigError("r_max must be positive");
  if (post.dmax < 1) throw ConfigError("dmax must be positive");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::size_t> seen;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!seen.emplace(key, lineno).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                        std::to_string(seen[key]));
    }
    try {
      c.set(key, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

}  // namespace cellseg
