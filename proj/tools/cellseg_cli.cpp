// cellseg command-line front end. Errors print one line to stderr:
//   cellseg: error kind=<kind> exit=<code> msg=<text>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "cellseg/commands.hpp"

using namespace cellseg;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kFormat = 5,
  kData = 6,
  kShape = 7,
  kTraining = 8,
};

int exit_code(const Error& e) {
  const std::string k = e.kind();
  if (k == "usage") return kUsage;
  if (k == "config") return kConfig;
  if (k == "io") return kIo;
  if (k == "format") return kFormat;
  if (k == "data") return kData;
  if (k == "shape") return kShape;
  if (k == "training") return kTraining;
  return kInternal;
}

int fail(const std::string& kind, int code, std::string msg) {
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "cellseg: error kind=" << kind << " exit=" << code << " msg=" << msg << "\n";
  return code;
}

RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides, std::int64_t seed,
                       std::int64_t threads) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed >= 0) cfg.set("seed", std::to_string(seed));
  if (threads >= 0) cfg.set("threads", std::to_string(threads));
  return cfg;
}

std::string config_keys_help() {
  RunConfig defaults;
  std::string out = "Config keys (key = default):\n";
  for (const auto& k : RunConfig::keys()) {
    out += "  " + std::string(k.name) + " = " + defaults.get(k.name) + "    # " + k.help + "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder-decoder cell instance segmentation: synthesis, training, inference, scoring"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  // gen-synth
  GenSynthOptions gen;
  std::string gen_freq;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write a synthetic labelled dataset with a 70/10/20 manifest");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of patches")->capture_default_str();
  gen_cmd->add_option("--size", gen.scene.size, "Patch side length")->capture_default_str();
  gen_cmd->add_option("--min-instances", gen.scene.min_instances, "Fewest instances per patch")->capture_default_str();
  gen_cmd->add_option("--max-instances", gen.scene.max_instances, "Most instances per patch")->capture_default_str();
  gen_cmd->add_option("--min-radius", gen.scene.min_radius, "Smallest ellipse semi-axis")->capture_default_str();
  gen_cmd->add_option("--max-radius", gen.scene.max_radius, "Largest ellipse semi-axis")->capture_default_str();
  gen_cmd->add_option("--n-types", gen.scene.n_types, "Number of cell types")->capture_default_str();
  gen_cmd->add_option("--type-freq", gen_freq, "Comma-separated type frequencies (default: uniform)");
  gen_cmd->add_option("--touch-prob", gen.scene.touch_prob, "Probability an instance touches another")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.scene.noise, "Gaussian noise sd, fraction of full scale")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();

  // train / infer share config handling
  std::string cfg_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1, threads = -1;
  auto add_config_opts = [&](CLI::App* c) {
    c->add_option("--config", cfg_path, "Run configuration file (key = value)");
    c->add_option("--set", overrides, "Override a config key: --set key=value (repeatable)");
    c->add_option("--seed", seed, "Override the config seed (-1 keeps it)")->capture_default_str();
    c->add_option("--threads", threads, "Override the OpenMP thread count (-1 keeps it)")->capture_default_str();
  };
  auto* train_cmd = app.add_subcommand("train", "Train the decoder; writes checkpoint, loss curve and resolved config");
  add_config_opts(train_cmd);
  train_cmd->footer(config_keys_help());

  InferOptions inf;
  std::string inf_split = "test";
  auto* infer_cmd = app.add_subcommand("infer", "Predict sm1/sm2/dm maps (<stem>.pmap) for a split or an image dir");
  add_config_opts(infer_cmd);
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "Checkpoint written by train")->required();
  infer_cmd->add_option("--manifest", inf.manifest, "Dataset manifest (default: config manifest)");
  infer_cmd->add_option("--split", inf_split, "Manifest split to predict")->capture_default_str();
  infer_cmd->add_option("--images", inf.image_dir, "Predict every *.png in this directory instead");
  infer_cmd->add_option("--out", inf.out_dir, "Output directory")->required();

  fs::path pp_maps, pp_out;
  PostprocParams pp;
  auto* pp_cmd = app.add_subcommand("postproc", "Turn predicted maps into instance label maps");
  pp_cmd->add_option("--maps", pp_maps, "Directory of .pmap files")->required();
  pp_cmd->add_option("--out", pp_out, "Output directory for label PNGs")->required();
  pp_cmd->add_option("--min-seed-area", pp.min_seed_area, "Smallest seed component (pixels)")->capture_default_str();
  pp_cmd->add_option("--r-max", pp.r_max, "Largest seed distance for centre voting")->capture_default_str();
  pp_cmd->add_option("--dmax", pp.dmax, "Distance-map scale used in training")->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted label maps: P, R, DQ, SQ, PQ and mPQ+");
  eval_cmd->add_option("--gt", ev.gt_dir, "Ground-truth label directory")->required();
  eval_cmd->add_option("--pred", ev.pred_dir, "Predicted label directory")->required();
  eval_cmd->add_option("--out", ev.out_dir, "Write metrics.csv and summary.csv here");
  eval_cmd->add_option("--n-types", ev.n_types, "Number of cell types (0 = largest seen)")->capture_default_str();
  eval_cmd->add_option("--name", ev.name, "Row name in summary.csv")->capture_default_str();

  std::uint32_t sb_n = 0;
  std::string sb_strategy;
  auto* sb_cmd = app.add_subcommand("select-blocks", "Print the four encoder blocks feeding the skips");
  sb_cmd->add_option("--n", sb_n, "Number of encoder blocks")->required();
  sb_cmd->add_option("--strategy", sb_strategy, "shallow | deep | mixed")->required();

  std::vector<fs::path> report_inputs;
  auto* report_cmd = app.add_subcommand("report", "Tabulate summary.csv files as percentages");
  report_cmd->add_option("inputs", report_inputs, "summary.csv files or directories holding one")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", kUsage, e.what());
  }

  try {
    if (*gen_cmd) {
      if (!gen_freq.empty()) {
        gen.scene.type_freq.clear();
        std::stringstream ss(gen_freq);
        for (std::string cell; std::getline(ss, cell, ',');) {
          try {
            gen.scene.type_freq.push_back(std::stod(cell));
          } catch (const std::exception&) {
            throw UsageError("--type-freq: '" + cell + "' is not a number");
          }
        }
      }
      std::cout << cmd_gen_synth(gen).string() << "\n";
    } else if (*train_cmd) {
      const RunConfig cfg = build_config(cfg_path, overrides, seed, threads);
      const auto r = cmd_train(cfg, [](const EpochRecord& e) {
        std::fprintf(stderr, "epoch %zu train_loss %.6f val_loss %.6f lr %.3e\n", e.epoch, e.train_loss, e.val_loss,
                     e.lr);
      });
      std::printf("initial_val_loss %.6f best_epoch %zu best_val_loss %.6f\n", r.initial_val_loss, r.best_epoch,
                  r.best_val_loss);
    } else if (*infer_cmd) {
      const RunConfig cfg = build_config(cfg_path, overrides, seed, threads);
      if (inf.manifest.empty() && inf.image_dir.empty()) inf.manifest = cfg.manifest;
      if (!inf.image_dir.empty()) inf.manifest.clear();
      inf.split = parse_split(inf_split);
      std::printf("%zu\n", cmd_infer(cfg, inf));
    } else if (*pp_cmd) {
      std::printf("%zu\n", cmd_postproc(pp_maps, pp_out, pp));
    } else if (*eval_cmd) {
      const auto s = cmd_eval(ev);
      std::cout << summary_table({{ev.name, s}});
    } else if (*sb_cmd) {
      std::cout << cmd_select_blocks(sb_n, parse_strategy(sb_strategy)) << "\n";
    } else if (*report_cmd) {
      std::cout << cmd_report(report_inputs);
    }
  } catch (const Error& e) {
    return fail(e.kind(), exit_code(e), e.what());
  } catch (const std::exception& e) {
    return fail("internal", kInternal, e.what());
  }
  return kOk;
}
