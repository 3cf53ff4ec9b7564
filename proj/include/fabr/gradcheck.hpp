#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fabr/ops.hpp"
#include "fabr/rng.hpp"
#include "fabr/tape.hpp"
#include "fabr/tensor.hpp"

namespace fabr {

// Central-difference gradient verification, always in 64-bit mode.
//
// The candidate forward pass is rebuilt from scratch for every evaluation, so
// it must be a pure function of the leaf tensors. The output is reduced to a
// scalar with a fixed random positive weight vector so that every output
// component influences the loss.
//
// Error metric: per component |analytic - fd| divided by
// max(|analytic|, |fd|, leaf gradient scale), where the leaf gradient scale
// is the largest analytic/fd magnitude seen for that leaf. Components whose
// two perturbed evaluations produce different kink signatures (leaky_relu
// sign flips, max winner changes) are excluded and counted as skipped.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
};

class GradCheck {
 public:
  explicit GradCheck(double eps = 1e-3) : eps_(eps) {}

  GradCheckResult check(const std::function<Tensor64(Tape64*)>& fwd,
                        const std::vector<Tensor64*>& leaves,
                        std::uint64_t seed = 17) const {
    // analytic gradients
    Tape64 tape;
    Tensor64 out = fwd(&tape);
    Tensor64 w = loss_weights(out.numel(), seed);
    Tensor64 flat = reshape(&tape, out, {static_cast<int>(out.numel())});
    Tensor64 loss = sum(&tape, mul(&tape, flat, w));
    for (Tensor64* leaf : leaves) leaf->zero_grad();
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (Tensor64* leaf : leaves) analytic.push_back(leaf->grad_vec());

    GradCheckResult res;
    for (size_t li = 0; li < leaves.size(); ++li) {
      Tensor64* leaf = leaves[li];
      const std::int64_t n = leaf->numel();
      std::vector<double> fd(static_cast<size_t>(n), 0.0);
      std::vector<char> usable(static_cast<size_t>(n), 1);
      double scale = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        double& xi = leaf->data()[i];
        const double saved = xi;
        xi = saved + eps_;
        std::uint64_t sig_hi = 0;
        const double f_hi = eval(fwd, w, &sig_hi);
        xi = saved - eps_;
        std::uint64_t sig_lo = 0;
        const double f_lo = eval(fwd, w, &sig_lo);
        xi = saved;
        if (sig_hi != sig_lo) {
          usable[static_cast<size_t>(i)] = 0;
          ++res.skipped;
          continue;
        }
        fd[static_cast<size_t>(i)] = (f_hi - f_lo) / (2.0 * eps_);
        const double a = std::abs(analytic[li][static_cast<size_t>(i)]);
        const double f = std::abs(fd[static_cast<size_t>(i)]);
        scale = std::max(scale, std::max(a, f));
      }
      if (scale < 1e-12) scale = 1e-12;
      for (std::int64_t i = 0; i < n; ++i) {
        if (!usable[static_cast<size_t>(i)]) continue;
        const double a = analytic[li][static_cast<size_t>(i)];
        const double f = fd[static_cast<size_t>(i)];
        const double denom = std::max(std::max(std::abs(a), std::abs(f)), scale);
        const double rel = std::abs(a - f) / denom;
        res.max_rel_err = std::max(res.max_rel_err, rel);
        ++res.checked;
      }
    }
    return res;
  }

 private:
  static Tensor64 loss_weights(std::int64_t n, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x105eull));
    Tensor64 w({static_cast<int>(n)});
    for (auto& v : w.vec()) v = 0.5 + rng.uniform();
    return w;
  }

  double eval(const std::function<Tensor64(Tape64*)>& fwd, const Tensor64& w,
              std::uint64_t* sig) const {
    KinkProbe probe;
    g_kink_probe = &probe;
    Tensor64 out = fwd(nullptr);
    g_kink_probe = nullptr;
    *sig = probe.hash;
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.numel(); ++i) acc += out.data()[i] * w.data()[i];
    return acc;
  }

  double eps_;
};

} // namespace fabr
