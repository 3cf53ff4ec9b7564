#pragma once

namespace fabr {

// Number of worker threads used by the compute kernels. Resolution order:
// explicit set_threads() > FABR_THREADS env var > hardware concurrency.
// All kernels partition work by output element (reductions stay inside one
// thread), so results are bit-identical for any thread count; deterministic
// mode simply pins the count to 1.
int thread_count();
void set_threads(int n);

} // namespace fabr
