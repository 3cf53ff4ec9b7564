#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "fabr/ops.hpp"
#include "fabr/tape.hpp"
#include "fabr/tensor.hpp"

namespace fabr {

// Per-scale weights for the two deep-supervision sums, finest scale first.
struct LossWeights {
  std::array<float, 4> lambda_o = {0.5f, 0.3f, 0.1f, 0.1f};
  std::array<float, 4> lambda_br = {0.5f, 0.3f, 0.1f, 0.1f};
  float dice_eps = 1e-5f;
};

// Soft Dice loss 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps).
// y is a constant target; gradients flow to p only.
template <typename T>
TensorT<T> dice_loss(TapeT<T>* tape, const TensorT<T>& p, const TensorT<T>& y, T eps = T(1e-5)) {
  if (p.shape() != y.shape())
    throw std::runtime_error("dice_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(y.shape()));
  const std::int64_t n = p.numel();
  const T* pp = p.data();
  const T* yp = y.data();
  T s_py = T(0), s_p = T(0), s_y = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    s_py += pp[i] * yp[i];
    s_p += pp[i];
    s_y += yp[i];
  }
  const T numer = T(2) * s_py + eps;
  const T denom = s_p + s_y + eps;
  const bool rec = detail::want_grad(tape, {&p});
  TensorT<T> out({1}, rec);
  out.data()[0] = T(1) - numer / denom;
  ensure_finite(out, "dice_loss");
  if (rec) {
    tape->record("dice_loss", [=]() {
      const T g = out.grad()[0];
      T* gp = p.grad();
      const T* yq = y.data();
      const T inv_d2 = T(1) / (denom * denom);
      for (std::int64_t i = 0; i < n; ++i)
        gp[i] += g * (numer - T(2) * yq[i] * denom) * inv_d2;
    });
  }
  return out;
}

// Mean binary cross-entropy with probabilities clamped away from {0,1}.
// The clamp arithmetic runs in double so the upper bound stays effective
// even when T is float (1 - 1e-7 rounds to 1 in 32-bit).
template <typename T>
TensorT<T> bce_loss(TapeT<T>* tape, const TensorT<T>& p, const TensorT<T>& y) {
  if (p.shape() != y.shape())
    throw std::runtime_error("bce_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(y.shape()));
  constexpr double kClamp = 1e-7;
  const std::int64_t n = p.numel();
  const T* pp = p.data();
  const T* yp = y.data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double pc = std::min(std::max(static_cast<double>(pp[i]), kClamp), 1.0 - kClamp);
    const double yv = static_cast<double>(yp[i]);
    acc -= yv * std::log(pc) + (1.0 - yv) * std::log1p(-pc);
  }
  const bool rec = detail::want_grad(tape, {&p});
  TensorT<T> out({1}, rec);
  out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
  ensure_finite(out, "bce_loss");
  if (rec) {
    tape->record("bce_loss", [=]() {
      const T g = out.grad()[0];
      T* gp = p.grad();
      const T* pq = p.data();
      const T* yq = y.data();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i) {
        const double pv = static_cast<double>(pq[i]);
        if (pv <= kClamp || pv >= 1.0 - kClamp) continue; // clamped: flat
        const double yv = static_cast<double>(yq[i]);
        gp[i] += g * static_cast<T>((-yv / pv + (1.0 - yv) / (1.0 - pv)) * inv_n);
      }
    });
  }
  return out;
}

// Deep-supervision loss over the four coarse heads: sum_l w_l (Dice + BCE).
template <typename T>
TensorT<T> ordinary_loss(TapeT<T>* tape, const std::array<TensorT<T>, 4>& probs,
                         const std::array<TensorT<T>, 4>& targets, const LossWeights& w) {
  TensorT<T> total;
  for (int l = 0; l < 4; ++l) {
    TensorT<T> term = add(tape, dice_loss(tape, probs[l], targets[l], static_cast<T>(w.dice_eps)),
                          bce_loss(tape, probs[l], targets[l]));
    term = scalar_mul(tape, term, static_cast<T>(w.lambda_o[l]));
    total = total.defined() ? add(tape, total, term) : term;
  }
  return total;
}

// Same weighted sum over the border point sets; scales without points (an
// undefined tensor) contribute nothing. Probabilities and targets are the
// per-point vectors gathered at BVP coordinates.
template <typename T>
TensorT<T> border_loss(TapeT<T>* tape, const std::array<TensorT<T>, 4>& point_probs,
                       const std::array<TensorT<T>, 4>& point_targets, const LossWeights& w) {
  TensorT<T> total;
  for (int l = 0; l < 4; ++l) {
    if (!point_probs[l].defined()) continue;
    TensorT<T> term =
        add(tape, dice_loss(tape, point_probs[l], point_targets[l], static_cast<T>(w.dice_eps)),
            bce_loss(tape, point_probs[l], point_targets[l]));
    term = scalar_mul(tape, term, static_cast<T>(w.lambda_br[l]));
    total = total.defined() ? add(tape, total, term) : term;
  }
  if (!total.defined()) total = TensorT<T>::zeros({1});
  return total;
}

template <typename T>
TensorT<T> total_loss(TapeT<T>* tape, const TensorT<T>& ordinary, const TensorT<T>& border) {
  return add(tape, ordinary, border);
}

} // namespace fabr
