#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fabr/border.hpp"
#include "fabr/config.hpp"
#include "fabr/losses.hpp"
#include "fabr/metrics.hpp"
#include "fabr/model.hpp"

namespace fabr {

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------
// data_dir/manifest.txt  first line `dims = H,W,D`, then one `case <name>`
//                        line per phantom in generation order
// data_dir/split.txt     three lines: `train <names...>`, `val ...`, `test ...`
// data_dir/<name>.vol / .mask / .branches   per-case payload

struct CaseData {
  std::string name;
  VolumeF volume;
  MaskU8 mask;
  std::vector<Branch> branches;
};

struct Dataset {
  std::array<int, 3> dims{};
  std::vector<CaseData> cases;
  std::vector<int> train, val, test; // indices into cases
};

// Writes cfg.data.count phantoms plus manifest and split files into
// cfg.data_dir. Deterministic in cfg.seed. A count of zero writes just the
// manifest. Returns the number of cases written.
int generate_dataset(const RunConfig& cfg);

// Loads everything phantom-gen wrote. Throws with the offending path on any
// missing or malformed file.
Dataset load_dataset(const std::string& data_dir);

// ---------------------------------------------------------------------------
// Forward helpers shared by training, evaluation, and inference
// ---------------------------------------------------------------------------

Tensor volume_to_tensor(const VolumeF& vol);   // [1,1,H,W,D]
Tensor mask_to_tensor(const MaskU8& mask);     // [1,1,H,W,D], values 0/1

// Voxel-count Dice on hard masks; both empty counts as a perfect 1.
double hard_dice(const MaskU8& pred, const MaskU8& gt);

// One training forward: the deep-supervised coarse loss plus the border-point
// loss, with border points taken from the ground-truth mask pyramid.
// Gradients do not flow through point selection (a discrete index set).
struct LossBundle {
  Tensor ordinary, border, total;
};
LossBundle compute_losses(Tape* tape, const Model& model, const Tensor& x,
                          const std::vector<MaskU8>& pyramid, const LossWeights& w);

struct Prediction {
  CoarseOutputs coarse;  // gradient-free forward pass
  MaskU8 coarse_mask;    // finest probabilities binarized at tau
  BvpSet bvp;            // border points of coarse_mask
  MaskU8 rendered;       // coarse_mask with refined border points
};

// Full test-phase pipeline: forward, binarize, locate border points on the
// prediction, refine them, render. No gradients involved.
Prediction predict(const Model& model, const VolumeF& vol, float tau);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Raised when the training loss stops being finite; the command layer turns
// it into a one-line abort that names the batch.
struct NanLossError : std::runtime_error {
  int epoch;
  int batch;
  std::string case_name;
  NanLossError(int epoch_, int batch_, std::string case_name_)
      : std::runtime_error("NaN loss at epoch " + std::to_string(epoch_) + " batch " +
                           std::to_string(batch_) + " (case " + case_name_ + ")"),
        epoch(epoch_),
        batch(batch_),
        case_name(std::move(case_name_)) {}
};

struct EpochRow {
  int epoch = 0;
  double ordinary = 0.0;
  double border = 0.0;
  double total = 0.0;
  double val_dice = 0.0;
};

std::string epoch_csv_header(); // "epoch,ordinary_loss,border_loss,total,val_dice"
std::string epoch_csv_row(const EpochRow& row);

struct TrainResult {
  std::vector<EpochRow> rows;        // epochs run by this call
  std::string last_checkpoint;       // path of the newest checkpoint
  int epochs_completed = 0;          // absolute epoch counter after the run
};

// Runs (or resumes) training per cfg: shuffled flip-augmented epochs, AdamW,
// per-epoch checkpoint `ckpt_epoch_NNN.bin` and a `train_log.csv` row in
// cfg.out_dir. All randomness is derived from (cfg.seed, absolute epoch), so
// resuming from the epoch-k checkpoint replays epochs k+1.. bit-exactly.
// When cfg.two_stage is set, the backbone freezes after half the epochs and
// only the refinement head keeps training. Volumes must have sides divisible
// by 16 so every pyramid scale stays even for border-point extraction.
// stop_after_epoch pauses the run after that absolute epoch (0 = run to
// cfg.optim.epochs) without changing the config the checkpoints are tied to.
TrainResult train_run(const RunConfig& cfg, const Dataset& ds,
                      const std::string& resume_path = "", bool force_resume = false,
                      int stop_after_epoch = 0);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct CaseEval {
  std::string name;
  MetricsReport coarse;             // metrics of the binarized coarse mask
  MetricsReport rendered;           // metrics after border rendering
  double border_acc_coarse = 1.0;   // accuracy vs GT restricted to border points
  double border_acc_rendered = 1.0; // (both 1 when the case has no border points)
  std::size_t bvp_count = 0;
};

std::vector<CaseEval> evaluate_split(const Model& model, const RunConfig& cfg, const Dataset& ds,
                                     const std::vector<int>& indices);

} // namespace fabr
