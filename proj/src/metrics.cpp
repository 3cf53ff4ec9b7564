#include "fabr/metrics.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fabr {

namespace {

void check_same_dims(const MaskU8& a, const MaskU8& b, const char* op) {
  if (a.dims != b.dims) throw std::runtime_error(std::string(op) + ": volume dims differ");
}

std::int64_t count_fg(const MaskU8& m) {
  std::int64_t n = 0;
  for (auto v : m.v) n += (v != 0);
  return n;
}

} // namespace

double iou(const MaskU8& pred, const MaskU8& gt) {
  check_same_dims(pred, gt, "iou");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    inter += (p && g);
    uni += (p || g);
  }
  if (uni == 0) return 1.0; // two empty masks agree perfectly
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double precision(const MaskU8& pred, const MaskU8& gt, bool* empty_flag) {
  check_same_dims(pred, gt, "precision");
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] == 0) continue;
    if (gt.v[i] != 0)
      ++tp;
    else
      ++fp;
  }
  if (tp + fp == 0) {
    if (empty_flag) *empty_flag = true;
    return 0.0;
  }
  if (empty_flag) *empty_flag = false;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double amr(const MaskU8& pred, const MaskU8& gt) {
  check_same_dims(pred, gt, "amr");
  std::int64_t missing = 0, total = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (gt.v[i] == 0) continue;
    ++total;
    missing += (pred.v[i] == 0);
  }
  if (total == 0) throw std::runtime_error("amr: empty ground truth");
  return static_cast<double>(missing) / static_cast<double>(total);
}

double dlr(const MaskU8& pred, const std::vector<Branch>& tree) {
  std::int64_t covered = 0, total = 0;
  for (const auto& b : tree)
    for (const auto& c : b.centerline) {
      ++total;
      if (pred.in_bounds(c) && pred.at(c[0], c[1], c[2]) != 0) ++covered;
    }
  if (total == 0) throw std::runtime_error("dlr: tree has no centerline voxels");
  return static_cast<double>(covered) / static_cast<double>(total);
}

std::vector<int> branch_regions(const MaskU8& gt, const std::vector<Branch>& tree) {
  std::vector<int> region(gt.v.size(), -1);
  for (int x = 0; x < gt.dims[0]; ++x)
    for (int y = 0; y < gt.dims[1]; ++y)
      for (int z = 0; z < gt.dims[2]; ++z) {
        const std::size_t idx =
            (static_cast<std::size_t>(x) * gt.dims[1] + y) * gt.dims[2] + z;
        if (gt.v[idx] == 0) continue;
        std::int64_t best = std::numeric_limits<std::int64_t>::max();
        int best_id = -1;
        for (const auto& b : tree)
          for (const auto& c : b.centerline) {
            const std::int64_t dx = x - c[0], dy = y - c[1], dz = z - c[2];
            const std::int64_t d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best || (d2 == best && b.id < best_id)) {
              best = d2;
              best_id = b.id;
            }
          }
        region[idx] = best_id;
      }
  return region;
}

MetricsReport evaluate_case(const MaskU8& pred, const MaskU8& gt, const std::vector<Branch>& tree,
                            double detection_bar) {
  check_same_dims(pred, gt, "evaluate_case");
  for (const auto& b : tree)
    if (b.id < 0 || b.id >= static_cast<int>(tree.size()))
      throw std::runtime_error("evaluate_case: branch ids must be 0..n-1");
  MetricsReport r;
  r.iou = iou(pred, gt);
  r.precision = precision(pred, gt, &r.empty_prediction);
  r.total_volume = count_fg(gt);
  if (r.total_volume == 0) throw std::runtime_error("evaluate_case: empty ground truth");
  for (std::size_t i = 0; i < gt.v.size(); ++i)
    if (gt.v[i] != 0 && pred.v[i] == 0) ++r.missing_volume;
  r.amr = static_cast<double>(r.missing_volume) / static_cast<double>(r.total_volume);

  const auto region = branch_regions(gt, tree);
  std::vector<std::int64_t> region_size(tree.size(), 0), region_hit(tree.size(), 0);
  // Branch ids are their indices in generation order.
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region[i] < 0) continue;
    ++region_size[static_cast<std::size_t>(region[i])];
    if (pred.v[i] != 0) ++region_hit[static_cast<std::size_t>(region[i])];
  }
  r.total_branches = static_cast<std::int64_t>(tree.size());
  for (const auto& b : tree) {
    BranchMetrics bm;
    bm.id = b.id;
    const auto bi = static_cast<std::size_t>(b.id);
    bm.region_coverage = region_size[bi] == 0 ? 0.0
                                              : static_cast<double>(region_hit[bi]) /
                                                    static_cast<double>(region_size[bi]);
    std::int64_t cl_hit = 0;
    for (const auto& c : b.centerline) {
      r.total_length += 1;
      if (pred.in_bounds(c) && pred.at(c[0], c[1], c[2]) != 0) {
        ++cl_hit;
        ++r.detected_length;
      }
    }
    bm.centerline_covered = b.centerline.empty()
                                ? 0.0
                                : static_cast<double>(cl_hit) /
                                      static_cast<double>(b.centerline.size());
    bm.detected = bm.region_coverage > detection_bar;
    if (bm.detected) ++r.detected_branches;
    r.branches.push_back(bm);
  }
  r.dlr = r.total_length == 0
              ? 0.0
              : static_cast<double>(r.detected_length) / static_cast<double>(r.total_length);
  r.dbr = r.total_branches == 0
              ? 0.0
              : static_cast<double>(r.detected_branches) / static_cast<double>(r.total_branches);
  return r;
}

double dbr(const MaskU8& pred, const MaskU8& gt, const std::vector<Branch>& tree, double bar) {
  return evaluate_case(pred, gt, tree, bar).dbr;
}

std::string metrics_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  os << "case_id,iou,precision,dlr,dbr,amr\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& [id, r] : rows)
    os << id << "," << r.iou << "," << r.precision << "," << r.dlr << "," << r.dbr << ","
       << r.amr << "\n";
  return os.str();
}

std::string metrics_json(const std::string& case_id, const MetricsReport& r) {
  nlohmann::json j;
  j["case_id"] = case_id;
  j["iou"] = r.iou;
  j["precision"] = r.precision;
  j["dlr"] = r.dlr;
  j["dbr"] = r.dbr;
  j["amr"] = r.amr;
  j["empty_prediction"] = r.empty_prediction;
  j["counts"] = {{"detected_branches", r.detected_branches},
                 {"total_branches", r.total_branches},
                 {"detected_length", r.detected_length},
                 {"total_length", r.total_length},
                 {"missing_volume", r.missing_volume},
                 {"total_volume", r.total_volume}};
  j["branches"] = nlohmann::json::array();
  for (const auto& b : r.branches)
    j["branches"].push_back({{"id", b.id},
                             {"detected", b.detected},
                             {"region_coverage", b.region_coverage},
                             {"centerline_covered", b.centerline_covered}});
  return j.dump(2);
}

} // namespace fabr
