#pragma once

// Library entry points behind each CLI subcommand. They throw cellseg::Error
// subclasses; the CLI maps those to exit codes.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cellseg/config.hpp"
#include "cellseg/metrics.hpp"
#include "cellseg/synth.hpp"

namespace cellseg {

struct GenSynthOptions {
  std::filesystem::path out_dir;
  std::size_t count = 300;
  SceneSpec scene;  // scene.seed is ignored; per-patch seeds derive from `seed`
  std::uint64_t seed = 0;
};

// Writes images/<id>.png, labels/<id>.png (+ .types.json) and manifest.tsv
// with a 70/10/20 split. Returns the manifest path.
std::filesystem::path cmd_gen_synth(const GenSynthOptions& opt);

// Trains per `cfg`, writing checkpoint.fmck, loss_curve.csv and run.cfg into
// cfg.out_dir.
FitResult cmd_train(const RunConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;  // with split; or
  Split split = Split::kTest;
  std::filesystem::path image_dir;  // every *.png inside
  std::filesystem::path out_dir;
};

// Writes <stem>.pmap per input. Returns the number of patches processed.
std::size_t cmd_infer(const RunConfig& cfg, const InferOptions& opt);

// Reads every *.pmap in maps_dir; writes <stem>.png + sidecar to out_dir.
std::size_t cmd_postproc(const std::filesystem::path& maps_dir, const std::filesystem::path& out_dir,
                         const PostprocParams& params);

struct EvalOptions {
  std::filesystem::path gt_dir;
  std::filesystem::path pred_dir;
  std::filesystem::path out_dir;  // metrics.csv and summary.csv; empty = none
  std::uint32_t n_types = 0;      // 0 = largest type seen
  std::string name = "run";
};

// Scores every label map in pred_dir against the same file name in gt_dir.
MetricsSummary cmd_eval(const EvalOptions& opt);

std::string cmd_select_blocks(std::uint32_t n_blocks, Strategy strategy);

// Table over summary.csv files (or directories holding one).
std::string cmd_report(const std::vector<std::filesystem::path>& inputs);

// Sorted *.<ext> files directly inside dir; label sidecars are skipped.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& ext);

}  // namespace cellseg
