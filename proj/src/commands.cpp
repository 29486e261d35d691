#include "cellseg/commands.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "cellseg/encoders.hpp"
#include "cellseg/fmap.hpp"
#include "cellseg/image_io.hpp"
#include "cellseg/targets.hpp"

namespace cellseg {

namespace fs = std::filesystem;

namespace {

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw IoError("no such directory: " + p.string());
}

void apply_threads(std::size_t threads) {
  if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
}

ModelConfig model_config_for(const RunConfig& cfg, const std::vector<LabeledImage>& sample) {
  ModelConfig mc = cfg.model;
  if (mc.encoder == EncoderKind::kDump) {
    if (sample.empty() || sample.front().features.size() != 4) throw DataError("no feature dumps to size the model");
    for (std::size_t i = 0; i < 4; ++i) mc.dump_channels[i] = sample.front().features[i].tensor.shape().c;
  }
  return mc;
}

}  // namespace

std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  require_dir(dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ext) continue;
    out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path cmd_gen_synth(const GenSynthOptions& opt) {
  if (opt.out_dir.empty()) throw UsageError("gen-synth needs an output directory");
  SceneSpec spec = opt.scene;
  spec.validate();
  make_dirs(opt.out_dir / "images");
  make_dirs(opt.out_dir / "labels");
  const auto splits = split_assignment(opt.count, opt.seed);
  std::mt19937_64 seeds(opt.seed);
  DatasetManifest manifest;
  for (std::size_t i = 0; i < opt.count; ++i) {
    spec.seed = seeds();
    const Scene scene = generate_scene(spec);
    char id[32];
    std::snprintf(id, sizeof id, "patch_%05zu", i);
    const std::string img = std::string("images/") + id + ".png";
    const std::string lab = std::string("labels/") + id + ".png";
    write_rgb_png(opt.out_dir / img, scene.image);
    write_label_map(opt.out_dir / lab, scene.gt);
    manifest.records.push_back({img, lab, splits[i]});
  }
  const fs::path path = opt.out_dir / "manifest.tsv";
  write_manifest(path, manifest);
  return path;
}

FitResult cmd_train(const RunConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  apply_threads(cfg.threads);
  if (cfg.manifest.empty()) throw ConfigError("train needs a manifest");
  const fs::path fmaps = cfg.model.encoder == EncoderKind::kDump ? cfg.fmap_dir : fs::path{};
  if (cfg.model.encoder == EncoderKind::kDump && fmaps.empty()) throw ConfigError("encoder = dump needs fmap_dir");
  const auto train = load_split(cfg.manifest, Split::kTrain, fmaps);
  const auto val = load_split(cfg.manifest, Split::kVal, fmaps);
  for (const auto* set : {&train, &val}) {
    for (const auto& li : *set) {
      if (li.gt.height != cfg.model.decoder.input_size || li.gt.width != cfg.model.decoder.input_size) {
        throw ConfigError("patch " + li.id + " is " + std::to_string(li.gt.height) + "x" + std::to_string(li.gt.width) +
                          " but input_size is " + std::to_string(cfg.model.decoder.input_size));
      }
    }
  }
  Model model(model_config_for(cfg, train));
  make_dirs(cfg.out_dir);
  RunConfig resolved = cfg;
  resolved.model = model.config();
  write_file_atomic(cfg.out_dir / "run.cfg", resolved.to_text());
  return fit(model, train, val, cfg.train, cfg.out_dir / "checkpoint.fmck", cfg.out_dir / "loss_curve.csv", on_epoch);
}

std::size_t cmd_infer(const RunConfig& cfg, const InferOptions& opt) {
  cfg.validate();
  apply_threads(cfg.threads);
  if (opt.out_dir.empty()) throw UsageError("infer needs an output directory");
  const bool dumps = cfg.model.encoder == EncoderKind::kDump;
  if (dumps && cfg.fmap_dir.empty()) throw ConfigError("encoder = dump needs fmap_dir");
  std::vector<LabeledImage> items;
  if (!opt.manifest.empty()) {
    items = load_split(opt.manifest, opt.split, dumps ? cfg.fmap_dir : fs::path{});
  } else if (!opt.image_dir.empty()) {
    for (const auto& p : list_files(opt.image_dir, ".png")) {
      LabeledImage li;
      li.id = p.stem().string();
      li.image = read_rgb_png(p);
      if (dumps) li.features = read_fmap(cfg.fmap_dir / (li.id + ".fmap"));
      items.push_back(std::move(li));
    }
  } else {
    throw UsageError("infer needs a manifest or an image directory");
  }
  Model model(model_config_for(cfg, items));
  model.load_state(read_checkpoint(opt.checkpoint));
  make_dirs(opt.out_dir);
  for (const auto& li : items) {
    const std::size_t size = li.image.height;
    if (li.image.width != size) throw DataError("patch " + li.id + " is not square");
    const FeaturePyramid<float> pyr =
        dumps ? pyramid_from_levels(li.features) : model.encode(image_to_tensor(li.image));
    const auto maps = predict(model, pyr, size);
    write_pmap(opt.out_dir / (li.id + ".pmap"), maps.front());
  }
  return items.size();
}

std::size_t cmd_postproc(const fs::path& maps_dir, const fs::path& out_dir, const PostprocParams& params) {
  const auto files = list_files(maps_dir, ".pmap");
  make_dirs(out_dir);
  for (const auto& f : files) {
    const auto maps = read_pmap(f);
    const auto labels = postprocess(maps.sm1, maps.sm2, maps.dm, params);
    write_label_map(out_dir / (f.stem().string() + ".png"), labels);
  }
  return files.size();
}

MetricsSummary cmd_eval(const EvalOptions& opt) {
  const auto preds = list_files(opt.pred_dir, ".png");
  require_dir(opt.gt_dir);
  std::vector<std::pair<InstanceLabelMap, InstanceLabelMap>> pairs;
  std::vector<ImageRow> rows;
  std::uint32_t n_types = opt.n_types;
  for (const auto& p : preds) {
    const fs::path g = opt.gt_dir / p.filename();
    if (!fs::exists(g)) throw IoError("no ground truth for " + p.filename().string() + " in " + opt.gt_dir.string());
    auto gt = read_label_map(g);
    auto pred = read_label_map(p);
    if (opt.n_types == 0) {
      for (const auto* m : {&gt, &pred}) {
        for (const auto& [id, t] : m->types) n_types = std::max(n_types, t);
      }
    }
    rows.push_back({p.stem().string(), image_metrics(match_instances(gt, pred))});
    pairs.emplace_back(std::move(gt), std::move(pred));
  }
  MpqAccumulator acc(std::max<std::uint32_t>(n_types, 1));
  for (const auto& [gt, pred] : pairs) acc.add(gt, pred);
  const MetricsSummary s = summarize(rows, acc);
  if (!opt.out_dir.empty()) {
    make_dirs(opt.out_dir);
    write_file_atomic(opt.out_dir / "metrics.csv", metrics_csv(rows));
    write_file_atomic(opt.out_dir / "summary.csv", summary_csv_header() + summary_csv_row(opt.name, s));
  }
  return s;
}

std::string cmd_select_blocks(std::uint32_t n_blocks, Strategy strategy) {
  const auto b = select_blocks(n_blocks, strategy);
  return std::to_string(b[0]) + " " + std::to_string(b[1]) + " " + std::to_string(b[2]) + " " + std::to_string(b[3]);
}

std::string cmd_report(const std::vector<fs::path>& inputs) {
  if (inputs.empty()) throw UsageError("report needs at least one summary.csv");
  std::vector<std::pair<std::string, MetricsSummary>> rows;
  for (fs::path p : inputs) {
    if (fs::is_directory(p)) p /= "summary.csv";
    const auto bytes = read_file_bytes(p);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::string line;
    std::size_t offset = 0;
    if (!std::getline(in, line) || line + "\n" != summary_csv_header()) {
      throw FormatError("not a summary.csv: " + p.string(), 0);
    }
    offset += line.size() + 1;
    while (std::getline(in, line)) {
      const std::size_t at = offset;
      offset += line.size() + 1;
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::istringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
      if (f.size() != 9) throw FormatError("summary row needs 9 fields in " + p.string(), at);
      MetricsSummary s;
      try {
        double* dst[] = {&s.p, &s.r, &s.dq, &s.sq, &s.pq, &s.mpq_plus};
        for (std::size_t i = 0; i < 6; ++i) *dst[i] = std::stod(f[i + 1]) / 100.0;
        s.images = std::stoul(f[7]);
        s.excluded = std::stoul(f[8]);
      } catch (const std::exception&) {
        throw FormatError("unparsable number in " + p.string(), at);
      }
      rows.emplace_back(f[0], s);
    }
  }
  return summary_table(rows);
}

}  // namespace cellseg
