// Command-line front end: dataset generation, training, evaluation,
// inference, border-point inspection, and the finite-difference gradient
// suite. Every failure path prints a single `error: ...` line to stderr and
// exits nonzero.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fabr/adamw.hpp"
#include "fabr/border.hpp"
#include "fabr/config.hpp"
#include "fabr/grad_suite.hpp"
#include "fabr/io.hpp"
#include "fabr/metrics.hpp"
#include "fabr/model.hpp"
#include "fabr/threading.hpp"
#include "fabr/train.hpp"
#include "fabr/volume.hpp"

namespace fs = std::filesystem;
using namespace fabr;

namespace {

// Builds the model for `cfg` and loads `ckpt_path` into it (parameters and
// optimizer state both; callers that never step the optimizer just ignore
// the moments). Rejects checkpoints whose config hash disagrees unless
// `force` is set.
struct LoadedModel {
  Model model;
  AdamW opt;
  Checkpoint ck;
};

LoadedModel load_model(const RunConfig& cfg, const std::string& ckpt_path, bool force) {
  LoadedModel lm{Model::init(cfg), AdamW(AdamWConfig{}), Checkpoint{}};
  lm.opt.attach(lm.model.params());
  lm.ck = read_checkpoint_for(ckpt_path, config_hash(cfg), force);
  apply_checkpoint(lm.ck, lm.model, lm.opt);
  return lm;
}

int cmd_phantom_gen(const RunConfig& cfg) {
  const int n = generate_dataset(cfg);
  std::printf("wrote %d case%s to %s (grid %dx%dx%d)\n", n, n == 1 ? "" : "s",
              cfg.data_dir.c_str(), cfg.phantom.grid[0], cfg.phantom.grid[1],
              cfg.phantom.grid[2]);
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& resume, bool force, int stop_after) {
  const Dataset ds = load_dataset(cfg.data_dir);
  std::printf("dataset: %zu cases (%zu train / %zu val / %zu test), dims %dx%dx%d\n",
              ds.cases.size(), ds.train.size(), ds.val.size(), ds.test.size(), ds.dims[0],
              ds.dims[1], ds.dims[2]);
  fs::create_directories(cfg.out_dir);
  write_text_file((fs::path(cfg.out_dir) / "config.ini").string(), serialize_config(cfg));
  const TrainResult res = train_run(cfg, ds, resume, force, stop_after);
  for (const EpochRow& r : res.rows)
    std::printf("epoch %d: ordinary %.6f border %.6f total %.6f val_dice %.4f\n", r.epoch,
                r.ordinary, r.border, r.total, r.val_dice);
  std::printf("trained through epoch %d, last checkpoint %s\n", res.epochs_completed,
              res.last_checkpoint.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& split,
             bool force) {
  const Dataset ds = load_dataset(cfg.data_dir);
  const std::vector<int>* indices = nullptr;
  if (split == "train")
    indices = &ds.train;
  else if (split == "val")
    indices = &ds.val;
  else if (split == "test")
    indices = &ds.test;
  else
    throw std::runtime_error("eval: unknown split '" + split + "' (train, val, or test)");
  if (indices->empty()) throw std::runtime_error("eval: split '" + split + "' has no cases");

  LoadedModel lm = load_model(cfg, ckpt_path, force);
  const std::vector<CaseEval> evals = evaluate_split(lm.model, cfg, ds, *indices);

  // Two metric tables per run (without / with border rendering), a border
  // accuracy table, and one JSON report per case and variant.
  std::vector<std::pair<std::string, MetricsReport>> coarse_rows, rendered_rows;
  const fs::path out(cfg.out_dir);
  const fs::path json_dir = out / ("eval_" + split);
  fs::create_directories(json_dir);
  std::string border_csv = "case_id,bvp_count,border_acc_coarse,border_acc_rendered\n";
  double mean_coarse = 0.0, mean_rendered = 0.0;
  for (const CaseEval& e : evals) {
    coarse_rows.emplace_back(e.name, e.coarse);
    rendered_rows.emplace_back(e.name, e.rendered);
    char line[256];
    std::snprintf(line, sizeof line, "%s,%zu,%.6f,%.6f\n", e.name.c_str(), e.bvp_count,
                  e.border_acc_coarse, e.border_acc_rendered);
    border_csv += line;
    write_text_file((json_dir / (e.name + "_coarse.json")).string(),
                    metrics_json(e.name, e.coarse));
    write_text_file((json_dir / (e.name + "_rendered.json")).string(),
                    metrics_json(e.name, e.rendered));
    mean_coarse += e.border_acc_coarse;
    mean_rendered += e.border_acc_rendered;
    std::printf("case %s: iou %.4f -> %.4f, dlr %.4f -> %.4f, border acc %.4f -> %.4f (%zu pts)\n",
                e.name.c_str(), e.coarse.iou, e.rendered.iou, e.coarse.dlr, e.rendered.dlr,
                e.border_acc_coarse, e.border_acc_rendered, e.bvp_count);
  }
  mean_coarse /= static_cast<double>(evals.size());
  mean_rendered /= static_cast<double>(evals.size());
  write_text_file((out / ("eval_" + split + "_coarse.csv")).string(), metrics_csv(coarse_rows));
  write_text_file((out / ("eval_" + split + "_rendered.csv")).string(),
                  metrics_csv(rendered_rows));
  write_text_file((out / ("eval_" + split + "_border.csv")).string(), border_csv);
  std::printf("mean border accuracy: coarse %.4f rendered %.4f delta %+.4f\n", mean_coarse,
              mean_rendered, mean_rendered - mean_coarse);
  return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& ckpt_path, const std::string& vol_path,
              const std::string& out_path, bool force) {
  const VolumeF vol = read_volume(vol_path);
  for (int d : vol.dims)
    if (d % 8 != 0)
      throw std::runtime_error("infer: volume sides must be divisible by 8, got " +
                               std::to_string(vol.dims[0]) + "x" + std::to_string(vol.dims[1]) +
                               "x" + std::to_string(vol.dims[2]));
  LoadedModel lm = load_model(cfg, ckpt_path, force);
  const Prediction pred = predict(lm.model, vol, cfg.threshold);
  write_mask(out_path, pred.rendered);
  std::int64_t fg = 0;
  for (std::uint8_t v : pred.rendered.v) fg += v;
  std::printf("wrote %s: %dx%dx%d, %lld foreground voxels, %zu border points refined\n",
              out_path.c_str(), pred.rendered.dims[0], pred.rendered.dims[1],
              pred.rendered.dims[2], static_cast<long long>(fg), pred.bvp.points.size());
  return 0;
}

int cmd_bvp_dump(const std::string& mask_path, int levels) {
  const MaskU8 mask = read_mask(mask_path);
  const int div = 1 << levels;
  for (int d : mask.dims)
    if (d % div != 0)
      throw std::runtime_error("bvp-dump: mask sides must be divisible by " +
                               std::to_string(div) + " for " + std::to_string(levels) +
                               " level" + (levels == 1 ? "" : "s") + ", got " +
                               std::to_string(mask.dims[0]) + "x" + std::to_string(mask.dims[1]) +
                               "x" + std::to_string(mask.dims[2]));
  const std::vector<MaskU8> pyr = mask_pyramid(mask, levels);
  for (int l = 0; l < levels; ++l) {
    const BvpSet bvp = detect_bvp(pyr[static_cast<std::size_t>(l)], l);
    for (const Coord& p : bvp.points) std::printf("%d %d %d %d\n", l, p[0], p[1], p[2]);
  }
  return 0;
}

int cmd_gradcheck() {
  const std::vector<GradSuiteEntry> entries = run_gradient_suite();
  std::fputs(gradient_suite_table(entries).c_str(), stdout);
  if (!gradient_suite_ok(entries)) throw std::runtime_error("gradient checks failed");
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"fuzzy attention border rendering for 3-D tree segmentation"};
  app.require_subcommand(1);

  int threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "compute thread count (default: FABR_THREADS or all cores)");
  app.add_flag("--deterministic", deterministic, "pin compute to one thread for bit-exact runs");

  std::string config_path, resume_path, ckpt_path, split = "test";
  std::string vol_path, out_path, mask_path;
  bool force = false;
  int stop_after = 0, count_override = -1, levels = 4;
  std::int64_t seed_override = -1;
  std::string data_dir_override, out_dir_override;

  CLI::App* gen = app.add_subcommand("phantom-gen", "generate a synthetic tree dataset");
  gen->add_option("--config", config_path, "run configuration file")->required();
  gen->add_option("--out", data_dir_override, "override run.data_dir");
  gen->add_option("--count", count_override, "override phantom.count");
  gen->add_option("--seed", seed_override, "override run.seed");

  CLI::App* train = app.add_subcommand("train", "train on a generated dataset");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--stop-after", stop_after, "pause after this absolute epoch");
  train->add_option("--out", out_dir_override, "override run.out_dir");
  train->add_flag("--force", force, "load a checkpoint whose config hash mismatches");

  CLI::App* eval = app.add_subcommand("eval", "metric reports with and without border rendering");
  eval->add_option("--config", config_path, "run configuration file")->required();
  eval->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")->required();
  eval->add_option("--split", split, "train, val, or test (default test)");
  eval->add_option("--out", out_dir_override, "override run.out_dir");
  eval->add_flag("--force", force, "load a checkpoint whose config hash mismatches");

  CLI::App* infer = app.add_subcommand("infer", "segment one volume file");
  infer->add_option("--config", config_path, "run configuration file")->required();
  infer->add_option("--checkpoint", ckpt_path, "checkpoint to load")->required();
  infer->add_option("--volume", vol_path, "input volume file")->required();
  infer->add_option("--out", out_path, "output mask file")->required();
  infer->add_flag("--force", force, "load a checkpoint whose config hash mismatches");

  CLI::App* dump = app.add_subcommand("bvp-dump", "print border points as `level x y z` lines");
  dump->add_option("--mask", mask_path, "binary mask file")->required();
  dump->add_option("--levels", levels, "pyramid levels to scan (default 4)")
      ->check(CLI::Range(1, 4));

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  (void)grad;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help and friends
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (deterministic)
      set_threads(1);
    else if (threads > 0)
      set_threads(threads);

    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
      if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
      if (count_override >= 0) cfg.data.count = count_override;
      if (!data_dir_override.empty()) cfg.data_dir = data_dir_override;
      if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
      cfg.validate();
    }

    if (gen->parsed()) return cmd_phantom_gen(cfg);
    if (train->parsed()) return cmd_train(cfg, resume_path, force, stop_after);
    if (eval->parsed()) return cmd_eval(cfg, ckpt_path, split, force);
    if (infer->parsed()) return cmd_infer(cfg, ckpt_path, vol_path, out_path, force);
    if (dump->parsed()) return cmd_bvp_dump(mask_path, levels);
    if (grad->parsed()) return cmd_gradcheck();
    throw std::runtime_error("no command selected");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
