#pragma once

#include <cstdint>
#include <string>

#include "fabr/backbone.hpp"
#include "fabr/border.hpp"
#include "fabr/phantom.hpp"

namespace fabr {

// Optimizer and schedule. The shipped defaults are the desk preset (small
// enough to train in minutes on a CPU); full-scale experiments raise epochs
// to 120 and the phantom count/grid accordingly.
struct OptimSettings {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float weight_decay = 1e-4f;
  int epochs = 30;
  int batch_size = 1; // volumes per optimizer step (gradient accumulation)
};

struct DataSettings {
  int count = 20; // phantoms generated by phantom-gen
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
};

// Everything a run needs, parsed from a flat `key = value` file with
// [section] headers. parse -> serialize -> parse is a fixed point.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_set = false; // the seed key is mandatory in config files
  std::string data_dir = "data";
  std::string out_dir = "runs/default";
  float threshold = 0.5f; // binarization tau

  PhantomConfig phantom;
  DataSettings data;
  BackboneConfig backbone;
  GlcfConfig glcf;
  bool two_stage = false; // freeze the backbone for the second half of training
  OptimSettings optim;

  void validate() const; // throws on missing seed or inconsistent fields
};

// Throws on unknown keys, malformed lines, bad values, or (when
// require_seed) a missing `run.seed`.
RunConfig parse_config(const std::string& text, bool require_seed = true);
RunConfig load_config(const std::string& path, bool require_seed = true);

std::string serialize_config(const RunConfig& cfg);

// Hash of every config key except filesystem locations (run.data_dir,
// run.out_dir); stamped into checkpoints so a model is never silently loaded
// under a different architecture, while letting runs that differ only in
// paths exchange checkpoints.
std::uint64_t config_hash(const RunConfig& cfg);

} // namespace fabr
