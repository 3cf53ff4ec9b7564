#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fabr {

// One row of the finite-difference verification table.
struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
  bool pass = false;
};

// Central-difference gradient checks in 64-bit mode over every differentiable
// op plus the composed fuzzy attention module and the loss heads. Smooth ops
// must agree to 1e-5 relative error; ops with kinks (leaky relu, max) get
// 1e-3 with kink-adjacent samples excluded from the comparison.
std::vector<GradSuiteEntry> run_gradient_suite();

// Fixed-width pass/fail table, one row per entry, with a summary line.
std::string gradient_suite_table(const std::vector<GradSuiteEntry>& entries);

bool gradient_suite_ok(const std::vector<GradSuiteEntry>& entries);

} // namespace fabr
