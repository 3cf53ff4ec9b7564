#pragma once

#include <cstdint>

#include "fabr/threading.hpp"

// Hot compute kernels, templated on scalar type. Each kernel exists twice:
// the production variant here partitions independent output elements across
// OpenMP threads, and fabr::ref holds the plain serial formulation that the
// tests treat as the correctness oracle. Per-output accumulation order is
// identical in both, so results are bit-equal for any thread count.

namespace fabr {

// x:[N,C,H,W,D] k:[C,K,K,K] y:[N,C,Ho,Wo,Do]; plo_* are leading pad sizes.
template <typename T>
void conv3d_dw_forward(const T* x, int N, int C, int H, int W, int D,
                       const T* k, int K, int stride,
                       int plo_h, int plo_w, int plo_d,
                       T* y, int Ho, int Wo, int Do) {
  const std::int64_t xs_c = static_cast<std::int64_t>(H) * W * D;
  const std::int64_t ys_c = static_cast<std::int64_t>(Ho) * Wo * Do;
  const int nt = thread_count();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x + (static_cast<std::int64_t>(n) * C + c) * xs_c;
      const T* kc = k + static_cast<std::int64_t>(c) * K * K * K;
      T* yc = y + (static_cast<std::int64_t>(n) * C + c) * ys_c;
      for (int oh = 0; oh < Ho; ++oh) {
        const int ih0 = oh * stride - plo_h;
        for (int ow = 0; ow < Wo; ++ow) {
          const int iw0 = ow * stride - plo_w;
          for (int od = 0; od < Do; ++od) {
            const int id0 = od * stride - plo_d;
            T acc = T(0);
            for (int kh = 0; kh < K; ++kh) {
              const int ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < K; ++kw) {
                const int iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                const T* xrow = xc + (static_cast<std::int64_t>(ih) * W + iw) * D;
                const T* krow = kc + (static_cast<std::int64_t>(kh) * K + kw) * K;
                for (int kd = 0; kd < K; ++kd) {
                  const int id = id0 + kd;
                  if (id < 0 || id >= D) continue;
                  acc += xrow[id] * krow[kd];
                }
              }
            }
            yc[(static_cast<std::int64_t>(oh) * Wo + ow) * Do + od] = acc;
          }
        }
      }
    }
  }
}

// gx:[N,C,H,W,D] from gy:[N,C,Ho,Wo,Do]; gather formulation so each input
// element is owned by exactly one iteration.
template <typename T>
void conv3d_dw_grad_input(const T* gy, int N, int C, int Ho, int Wo, int Do,
                          const T* k, int K, int stride,
                          int plo_h, int plo_w, int plo_d,
                          T* gx, int H, int W, int D) {
  const std::int64_t xs_c = static_cast<std::int64_t>(H) * W * D;
  const std::int64_t ys_c = static_cast<std::int64_t>(Ho) * Wo * Do;
  const int nt = thread_count();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* gyc = gy + (static_cast<std::int64_t>(n) * C + c) * ys_c;
      const T* kc = k + static_cast<std::int64_t>(c) * K * K * K;
      T* gxc = gx + (static_cast<std::int64_t>(n) * C + c) * xs_c;
      for (int ih = 0; ih < H; ++ih) {
        for (int iw = 0; iw < W; ++iw) {
          for (int id = 0; id < D; ++id) {
            T acc = T(0);
            for (int kh = 0; kh < K; ++kh) {
              const int th = ih + plo_h - kh;
              if (th < 0 || th % stride) continue;
              const int oh = th / stride;
              if (oh >= Ho) continue;
              for (int kw = 0; kw < K; ++kw) {
                const int tw = iw + plo_w - kw;
                if (tw < 0 || tw % stride) continue;
                const int ow = tw / stride;
                if (ow >= Wo) continue;
                for (int kd = 0; kd < K; ++kd) {
                  const int td = id + plo_d - kd;
                  if (td < 0 || td % stride) continue;
                  const int od = td / stride;
                  if (od >= Do) continue;
                  acc += gyc[(static_cast<std::int64_t>(oh) * Wo + ow) * Do + od] *
                         kc[(static_cast<std::int64_t>(kh) * K + kw) * K + kd];
                }
              }
            }
            gxc[(static_cast<std::int64_t>(ih) * W + iw) * D + id] += acc;
          }
        }
      }
    }
  }
}

// gk:[C,K,K,K]; one thread owns one channel, so the reduction order over
// (n, output voxels) is serial and fixed.
template <typename T>
void conv3d_dw_grad_kernel(const T* x, int N, int C, int H, int W, int D,
                           const T* gy, int Ho, int Wo, int Do,
                           int K, int stride,
                           int plo_h, int plo_w, int plo_d,
                           T* gk) {
  const std::int64_t xs_c = static_cast<std::int64_t>(H) * W * D;
  const std::int64_t ys_c = static_cast<std::int64_t>(Ho) * Wo * Do;
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int c = 0; c < C; ++c) {
    T* gkc = gk + static_cast<std::int64_t>(c) * K * K * K;
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        for (int kd = 0; kd < K; ++kd) {
          T acc = T(0);
          for (int n = 0; n < N; ++n) {
            const T* xc = x + (static_cast<std::int64_t>(n) * C + c) * xs_c;
            const T* gyc = gy + (static_cast<std::int64_t>(n) * C + c) * ys_c;
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * stride - plo_h + kh;
              if (ih < 0 || ih >= H) continue;
              for (int ow = 0; ow < Wo; ++ow) {
                const int iw = ow * stride - plo_w + kw;
                if (iw < 0 || iw >= W) continue;
                for (int od = 0; od < Do; ++od) {
                  const int id = od * stride - plo_d + kd;
                  if (id < 0 || id >= D) continue;
                  acc += gyc[(static_cast<std::int64_t>(oh) * Wo + ow) * Do + od] *
                         xc[(static_cast<std::int64_t>(ih) * W + iw) * D + id];
                }
              }
            }
          }
          gkc[(static_cast<std::int64_t>(kh) * K + kw) * K + kd] += acc;
        }
      }
    }
  }
}

// x:[N,Ci,V] w:[Co,Ci] b:[Co] or null, y:[N,Co,V]. V is the flattened
// spatial extent; the v loop is innermost and contiguous.
template <typename T>
void pw_forward(const T* x, int N, int Ci, std::int64_t V,
                const T* w, const T* b, T* y, int Co) {
  const int nt = thread_count();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* yrow = y + (static_cast<std::int64_t>(n) * Co + co) * V;
      const T bias = b ? b[co] : T(0);
      for (std::int64_t v = 0; v < V; ++v) yrow[v] = bias;
      for (int ci = 0; ci < Ci; ++ci) {
        const T wv = w[static_cast<std::int64_t>(co) * Ci + ci];
        const T* xrow = x + (static_cast<std::int64_t>(n) * Ci + ci) * V;
        for (std::int64_t v = 0; v < V; ++v) yrow[v] += wv * xrow[v];
      }
    }
  }
}

template <typename T>
void pw_grad_input(const T* gy, int N, int Co, std::int64_t V,
                   const T* w, T* gx, int Ci) {
  const int nt = thread_count();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
  for (int n = 0; n < N; ++n) {
    for (int ci = 0; ci < Ci; ++ci) {
      T* gxrow = gx + (static_cast<std::int64_t>(n) * Ci + ci) * V;
      for (int co = 0; co < Co; ++co) {
        const T wv = w[static_cast<std::int64_t>(co) * Ci + ci];
        const T* gyrow = gy + (static_cast<std::int64_t>(n) * Co + co) * V;
        for (std::int64_t v = 0; v < V; ++v) gxrow[v] += wv * gyrow[v];
      }
    }
  }
}

template <typename T>
void pw_grad_weight(const T* gy, const T* x, int N, int Co, int Ci, std::int64_t V,
                    T* gw, T* gb) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < Ci; ++ci) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) {
        const T* gyrow = gy + (static_cast<std::int64_t>(n) * Co + co) * V;
        const T* xrow = x + (static_cast<std::int64_t>(n) * Ci + ci) * V;
        for (std::int64_t v = 0; v < V; ++v) acc += gyrow[v] * xrow[v];
      }
      gw[static_cast<std::int64_t>(co) * Ci + ci] += acc;
    }
    if (gb) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) {
        const T* gyrow = gy + (static_cast<std::int64_t>(n) * Co + co) * V;
        for (std::int64_t v = 0; v < V; ++v) acc += gyrow[v];
      }
      gb[co] += acc;
    }
  }
}

// x:[P,Fi] w:[Fo,Fi] b:[Fo] or null, y:[P,Fo]; rows are independent.
template <typename T>
void linear_forward(const T* x, std::int64_t P, int Fi,
                    const T* w, const T* b, T* y, int Fo) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (std::int64_t p = 0; p < P; ++p) {
    const T* xr = x + p * Fi;
    T* yr = y + p * Fo;
    for (int fo = 0; fo < Fo; ++fo) {
      const T* wr = w + static_cast<std::int64_t>(fo) * Fi;
      T acc = b ? b[fo] : T(0);
      for (int fi = 0; fi < Fi; ++fi) acc += wr[fi] * xr[fi];
      yr[fo] = acc;
    }
  }
}

template <typename T>
void linear_grad_input(const T* gy, std::int64_t P, int Fo,
                       const T* w, T* gx, int Fi) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (std::int64_t p = 0; p < P; ++p) {
    const T* gyr = gy + p * Fo;
    T* gxr = gx + p * Fi;
    for (int fo = 0; fo < Fo; ++fo) {
      const T g = gyr[fo];
      const T* wr = w + static_cast<std::int64_t>(fo) * Fi;
      for (int fi = 0; fi < Fi; ++fi) gxr[fi] += g * wr[fi];
    }
  }
}

template <typename T>
void linear_grad_weight(const T* gy, const T* x, std::int64_t P, int Fo, int Fi,
                        T* gw, T* gb) {
  const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int fo = 0; fo < Fo; ++fo) {
    T* gwr = gw + static_cast<std::int64_t>(fo) * Fi;
    T accb = T(0);
    for (std::int64_t p = 0; p < P; ++p) {
      const T g = gy[p * Fo + fo];
      const T* xr = x + p * Fi;
      for (int fi = 0; fi < Fi; ++fi) gwr[fi] += g * xr[fi];
      accb += g;
    }
    if (gb) gb[fo] += accb;
  }
}

// Serial reference formulations. Kept deliberately naive; the production
// kernels above are validated against these bit-for-bit.
namespace ref {

template <typename T>
void conv3d_dw_forward(const T* x, int N, int C, int H, int W, int D,
                       const T* k, int K, int stride,
                       int plo_h, int plo_w, int plo_d,
                       T* y, int Ho, int Wo, int Do) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
          for (int od = 0; od < Do; ++od) {
            T acc = T(0);
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw)
                for (int kd = 0; kd < K; ++kd) {
                  const int ih = oh * stride - plo_h + kh;
                  const int iw = ow * stride - plo_w + kw;
                  const int id = od * stride - plo_d + kd;
                  if (ih < 0 || ih >= H || iw < 0 || iw >= W || id < 0 || id >= D) continue;
                  acc += x[((((static_cast<std::int64_t>(n) * C + c) * H + ih) * W + iw)) * D + id] *
                         k[((static_cast<std::int64_t>(c) * K + kh) * K + kw) * K + kd];
                }
            y[((((static_cast<std::int64_t>(n) * C + c) * Ho + oh) * Wo + ow)) * Do + od] = acc;
          }
}

template <typename T>
void conv3d_dw_grad_input(const T* gy, int N, int C, int Ho, int Wo, int Do,
                          const T* k, int K, int stride,
                          int plo_h, int plo_w, int plo_d,
                          T* gx, int H, int W, int D) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ih = 0; ih < H; ++ih)
        for (int iw = 0; iw < W; ++iw)
          for (int id = 0; id < D; ++id) {
            T acc = T(0);
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw)
                for (int kd = 0; kd < K; ++kd) {
                  const int th = ih + plo_h - kh;
                  const int tw = iw + plo_w - kw;
                  const int td = id + plo_d - kd;
                  if (th < 0 || tw < 0 || td < 0) continue;
                  if (th % stride || tw % stride || td % stride) continue;
                  const int oh = th / stride, ow = tw / stride, od = td / stride;
                  if (oh >= Ho || ow >= Wo || od >= Do) continue;
                  acc += gy[((((static_cast<std::int64_t>(n) * C + c) * Ho + oh) * Wo + ow)) * Do + od] *
                         k[((static_cast<std::int64_t>(c) * K + kh) * K + kw) * K + kd];
                }
            gx[((((static_cast<std::int64_t>(n) * C + c) * H + ih) * W + iw)) * D + id] += acc;
          }
}

template <typename T>
void conv3d_dw_grad_kernel(const T* x, int N, int C, int H, int W, int D,
                           const T* gy, int Ho, int Wo, int Do,
                           int K, int stride,
                           int plo_h, int plo_w, int plo_d,
                           T* gk) {
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < K; ++kh)
      for (int kw = 0; kw < K; ++kw)
        for (int kd = 0; kd < K; ++kd) {
          T acc = T(0);
          for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < Ho; ++oh)
              for (int ow = 0; ow < Wo; ++ow)
                for (int od = 0; od < Do; ++od) {
                  const int ih = oh * stride - plo_h + kh;
                  const int iw = ow * stride - plo_w + kw;
                  const int id = od * stride - plo_d + kd;
                  if (ih < 0 || ih >= H || iw < 0 || iw >= W || id < 0 || id >= D) continue;
                  acc += gy[((((static_cast<std::int64_t>(n) * C + c) * Ho + oh) * Wo + ow)) * Do + od] *
                         x[((((static_cast<std::int64_t>(n) * C + c) * H + ih) * W + iw)) * D + id];
                }
          gk[((static_cast<std::int64_t>(c) * K + kh) * K + kw) * K + kd] += acc;
        }
}

template <typename T>
void pw_forward(const T* x, int N, int Ci, std::int64_t V,
                const T* w, const T* b, T* y, int Co) {
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (std::int64_t v = 0; v < V; ++v) {
        T acc = b ? b[co] : T(0);
        for (int ci = 0; ci < Ci; ++ci)
          acc += w[static_cast<std::int64_t>(co) * Ci + ci] *
                 x[(static_cast<std::int64_t>(n) * Ci + ci) * V + v];
        y[(static_cast<std::int64_t>(n) * Co + co) * V + v] = acc;
      }
}

} // namespace ref
} // namespace fabr
