#include <cstring>
#include <vector>

#include "doctest.h"
#include "fabr/kernels.hpp"
#include "fabr/rng.hpp"
#include "fabr/threading.hpp"

using namespace fabr;

// The parallel kernels partition independent output elements and keep the
// per-output accumulation order of the serial reference, so the comparison
// is bitwise, not approximate.
namespace {

std::vector<float> random_buf(size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.gaussian());
  return v;
}

} // namespace

TEST_CASE("depthwise conv forward matches the serial reference bitwise") {
  const int N = 2, C = 3, H = 7, W = 6, D = 5, K = 3;
  auto x = random_buf(static_cast<size_t>(N) * C * H * W * D, 1);
  auto k = random_buf(static_cast<size_t>(C) * K * K * K, 2);
  for (int threads : {1, 4}) {
    set_threads(threads);
    for (int stride : {1, 2}) {
      const int Ho = (H + stride - 1) / stride;
      const int Wo = (W + stride - 1) / stride;
      const int Do = (D + stride - 1) / stride;
      int tot_h = (Ho - 1) * stride + K - H;
      int tot_w = (Wo - 1) * stride + K - W;
      int tot_d = (Do - 1) * stride + K - D;
      if (tot_h < 0) tot_h = 0;
      if (tot_w < 0) tot_w = 0;
      if (tot_d < 0) tot_d = 0;
      std::vector<float> got(static_cast<size_t>(N) * C * Ho * Wo * Do);
      std::vector<float> want(got.size());
      conv3d_dw_forward(x.data(), N, C, H, W, D, k.data(), K, stride,
                        tot_h / 2, tot_w / 2, tot_d / 2, got.data(), Ho, Wo, Do);
      ref::conv3d_dw_forward(x.data(), N, C, H, W, D, k.data(), K, stride,
                             tot_h / 2, tot_w / 2, tot_d / 2, want.data(), Ho, Wo, Do);
      CHECK(std::memcmp(got.data(), want.data(), got.size() * sizeof(float)) == 0);
    }
  }
  set_threads(0);
}

TEST_CASE("depthwise conv gradients match the serial reference bitwise") {
  const int N = 1, C = 2, H = 6, W = 6, D = 6, K = 3, stride = 2;
  const int Ho = 3, Wo = 3, Do = 3;
  auto x = random_buf(static_cast<size_t>(N) * C * H * W * D, 3);
  auto k = random_buf(static_cast<size_t>(C) * K * K * K, 4);
  auto gy = random_buf(static_cast<size_t>(N) * C * Ho * Wo * Do, 5);
  for (int threads : {1, 4}) {
    set_threads(threads);
    std::vector<float> gx_got(x.size(), 0.0f), gx_want(x.size(), 0.0f);
    conv3d_dw_grad_input(gy.data(), N, C, Ho, Wo, Do, k.data(), K, stride, 0, 0, 0,
                         gx_got.data(), H, W, D);
    ref::conv3d_dw_grad_input(gy.data(), N, C, Ho, Wo, Do, k.data(), K, stride, 0, 0, 0,
                              gx_want.data(), H, W, D);
    CHECK(std::memcmp(gx_got.data(), gx_want.data(), gx_got.size() * sizeof(float)) == 0);

    std::vector<float> gk_got(k.size(), 0.0f), gk_want(k.size(), 0.0f);
    conv3d_dw_grad_kernel(x.data(), N, C, H, W, D, gy.data(), Ho, Wo, Do, K, stride, 0, 0, 0,
                          gk_got.data());
    ref::conv3d_dw_grad_kernel(x.data(), N, C, H, W, D, gy.data(), Ho, Wo, Do, K, stride, 0, 0, 0,
                               gk_want.data());
    CHECK(std::memcmp(gk_got.data(), gk_want.data(), gk_got.size() * sizeof(float)) == 0);
  }
  set_threads(0);
}

TEST_CASE("pointwise conv matches the serial reference bitwise") {
  const int N = 2, Ci = 5, Co = 4;
  const std::int64_t V = 6 * 6 * 6;
  auto x = random_buf(static_cast<size_t>(N) * Ci * V, 6);
  auto w = random_buf(static_cast<size_t>(Co) * Ci, 7);
  auto b = random_buf(static_cast<size_t>(Co), 8);
  for (int threads : {1, 4}) {
    set_threads(threads);
    std::vector<float> got(static_cast<size_t>(N) * Co * V), want(got.size());
    pw_forward(x.data(), N, Ci, V, w.data(), b.data(), got.data(), Co);
    ref::pw_forward(x.data(), N, Ci, V, w.data(), b.data(), want.data(), Co);
    CHECK(std::memcmp(got.data(), want.data(), got.size() * sizeof(float)) == 0);
  }
  set_threads(0);
}

TEST_CASE("thread count control") {
  set_threads(3);
  CHECK(thread_count() == 3);
  set_threads(0);
  CHECK(thread_count() >= 1);
}
