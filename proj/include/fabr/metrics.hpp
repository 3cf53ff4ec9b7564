#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fabr/phantom.hpp"
#include "fabr/volume.hpp"

namespace fabr {

struct BranchMetrics {
  int id = 0;
  bool detected = false;            // region coverage above the detection bar
  double region_coverage = 0.0;     // |pred ∩ region| / |region| (region-restricted IoU)
  double centerline_covered = 0.0;  // fraction of centerline voxels inside pred
};

struct MetricsReport {
  double iou = 0.0;
  double precision = 0.0;
  double dlr = 0.0; // detected-length ratio over centerlines
  double dbr = 0.0; // detected-branch ratio
  double amr = 0.0; // missing-volume ratio (false negatives / gt volume)
  bool empty_prediction = false;
  std::int64_t detected_branches = 0; // N_x
  std::int64_t total_branches = 0;    // N_y
  std::int64_t detected_length = 0;   // L_x
  std::int64_t total_length = 0;      // L_y
  std::int64_t missing_volume = 0;    // V_x
  std::int64_t total_volume = 0;      // V_y
  std::vector<BranchMetrics> branches;
};

double iou(const MaskU8& pred, const MaskU8& gt);

// TP/(TP+FP); an empty prediction yields 0 and sets *empty_flag when given.
double precision(const MaskU8& pred, const MaskU8& gt, bool* empty_flag = nullptr);

// Fraction of ground-truth centerline voxels the prediction covers.
double dlr(const MaskU8& pred, const std::vector<Branch>& tree);

// Fraction of branches whose voxel region is covered above `bar`. Regions
// partition the foreground by nearest centerline voxel (ties to the lower
// branch id).
double dbr(const MaskU8& pred, const MaskU8& gt, const std::vector<Branch>& tree,
           double bar = 0.8);

// Missing-volume ratio |gt ∧ ¬pred| / |gt|.
double amr(const MaskU8& pred, const MaskU8& gt);

// Everything at once, including the per-branch table.
MetricsReport evaluate_case(const MaskU8& pred, const MaskU8& gt, const std::vector<Branch>& tree,
                            double detection_bar = 0.8);

// Branch id per foreground voxel (-1 elsewhere): nearest centerline voxel by
// squared Euclidean distance, ties to the lower branch id.
std::vector<int> branch_regions(const MaskU8& gt, const std::vector<Branch>& tree);

// One row per case under a fixed header: case_id,iou,precision,dlr,dbr,amr.
std::string metrics_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows);

// Per-case JSON object with the per-branch detail included.
std::string metrics_json(const std::string& case_id, const MetricsReport& r);

} // namespace fabr
