// Times the OpenMP compute kernels against their serial reference
// formulations and verifies the two produce bit-identical output. Build and
// run via the `bench` target; FABR_THREADS or --threads controls the
// parallel side (the reference side is always single-threaded by
// construction).

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "fabr/kernels.hpp"
#include "fabr/rng.hpp"
#include "fabr/threading.hpp"

using namespace fabr;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.gaussian());
  return v;
}

double best_of_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

struct Row {
  std::string name;
  std::string size;
  double serial_ms = 0.0;
  double parallel_ms = 0.0;
  bool match = false;
};

void print_rows(const std::vector<Row>& rows) {
  std::printf("%-24s %-24s %11s %11s %8s  %s\n", "kernel", "size", "serial_ms", "parallel_ms",
              "speedup", "output");
  for (const Row& r : rows)
    std::printf("%-24s %-24s %11.2f %11.2f %7.2fx  %s\n", r.name.c_str(), r.size.c_str(),
                r.serial_ms, r.parallel_ms, r.serial_ms / r.parallel_ms,
                r.match ? "bit-equal" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
  int reps = 3;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--reps" && i + 1 < argc) {
      reps = std::atoi(argv[++i]);
    } else if (arg == "--threads" && i + 1 < argc) {
      set_threads(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "error: unknown argument '%s' (use --reps N, --threads N)\n",
                   arg.c_str());
      return 1;
    }
  }
  if (reps < 1) reps = 1;
  std::printf("threads: %d, reps: %d (best-of)\n\n", thread_count(), reps);

  std::vector<Row> rows;

  // Depthwise 3x3x3 convolution, the backbone's workhorse.
  {
    const int N = 1, C = 16, H = 48, W = 48, D = 48, K = 3, stride = 1, plo = 1;
    const auto x = random_vec(static_cast<std::size_t>(N) * C * H * W * D, 1);
    const auto k = random_vec(static_cast<std::size_t>(C) * K * K * K, 2);
    std::vector<float> y_par(x.size()), y_ser(x.size());
    Row row{"conv3d_dw_forward", "[1,16,48,48,48] K3 s1"};
    row.parallel_ms = best_of_ms(reps, [&] {
      conv3d_dw_forward(x.data(), N, C, H, W, D, k.data(), K, stride, plo, plo, plo, y_par.data(),
                        H, W, D);
    });
    row.serial_ms = best_of_ms(reps, [&] {
      ref::conv3d_dw_forward(x.data(), N, C, H, W, D, k.data(), K, stride, plo, plo, plo,
                             y_ser.data(), H, W, D);
    });
    row.match = std::memcmp(y_par.data(), y_ser.data(), y_par.size() * sizeof(float)) == 0;
    rows.push_back(row);

    const auto gy = random_vec(x.size(), 3);
    std::vector<float> gx_par(x.size()), gx_ser(x.size());
    Row gi{"conv3d_dw_grad_input", "[1,16,48,48,48] K3 s1"};
    gi.parallel_ms = best_of_ms(reps, [&] {
      conv3d_dw_grad_input(gy.data(), N, C, H, W, D, k.data(), K, stride, plo, plo, plo,
                           gx_par.data(), H, W, D);
    });
    gi.serial_ms = best_of_ms(reps, [&] {
      ref::conv3d_dw_grad_input(gy.data(), N, C, H, W, D, k.data(), K, stride, plo, plo, plo,
                                gx_ser.data(), H, W, D);
    });
    gi.match = std::memcmp(gx_par.data(), gx_ser.data(), gx_par.size() * sizeof(float)) == 0;
    rows.push_back(gi);

    std::vector<float> gk_par(k.size()), gk_ser(k.size());
    Row gk{"conv3d_dw_grad_kernel", "[1,16,48,48,48] K3 s1"};
    gk.parallel_ms = best_of_ms(reps, [&] {
      conv3d_dw_grad_kernel(x.data(), N, C, H, W, D, gy.data(), H, W, D, K, stride, plo, plo, plo,
                            gk_par.data());
    });
    gk.serial_ms = best_of_ms(reps, [&] {
      ref::conv3d_dw_grad_kernel(x.data(), N, C, H, W, D, gy.data(), H, W, D, K, stride, plo, plo,
                                 plo, gk_ser.data());
    });
    gk.match = std::memcmp(gk_par.data(), gk_ser.data(), gk_par.size() * sizeof(float)) == 0;
    rows.push_back(gk);
  }

  // Pointwise (1x1x1) channel-mixing convolution.
  {
    const int N = 1, Ci = 16, Co = 32;
    const std::int64_t V = 48 * 48 * 48;
    const auto x = random_vec(static_cast<std::size_t>(N) * Ci * V, 4);
    const auto w = random_vec(static_cast<std::size_t>(Co) * Ci, 5);
    const auto b = random_vec(static_cast<std::size_t>(Co), 6);
    std::vector<float> y_par(static_cast<std::size_t>(N) * Co * V), y_ser(y_par.size());
    Row row{"pw_forward", "16->32 ch, 48^3 voxels"};
    row.parallel_ms = best_of_ms(
        reps, [&] { pw_forward(x.data(), N, Ci, V, w.data(), b.data(), y_par.data(), Co); });
    row.serial_ms = best_of_ms(
        reps, [&] { ref::pw_forward(x.data(), N, Ci, V, w.data(), b.data(), y_ser.data(), Co); });
    row.match = std::memcmp(y_par.data(), y_ser.data(), y_par.size() * sizeof(float)) == 0;
    rows.push_back(row);
  }

  print_rows(rows);
  for (const Row& r : rows)
    if (!r.match) {
      std::fprintf(stderr, "error: parallel and serial outputs differ\n");
      return 1;
    }
  return 0;
}
