#include "fabr/threading.hpp"

#include <cstdlib>
#include <thread>

namespace fabr {

namespace {
int g_threads = 0; // 0 = unresolved
}

int thread_count() {
  if (g_threads > 0) return g_threads;
  if (const char* env = std::getenv("FABR_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) {
      g_threads = n;
      return g_threads;
    }
  }
  unsigned hw = std::thread::hardware_concurrency();
  g_threads = hw > 0 ? static_cast<int>(hw) : 1;
  return g_threads;
}

void set_threads(int n) { g_threads = n > 0 ? n : 0; }

} // namespace fabr
