#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "fabr/ops.hpp"
#include "fabr/rng.hpp"
#include "fabr/tape.hpp"
#include "fabr/tensor.hpp"

namespace fabr {

// Gaussian membership grades for every (function, channel) pair:
// out[n,i,c,v] = exp(-(x[n,c,v] - mu[i,c])^2 / (2 sigma[i,c]^2)).
// x:[N,C,spatial...] mu,sigma:[m,C] -> [N,m,C,spatial...].
template <typename T>
TensorT<T> gmf_membership(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& mu,
                          const TensorT<T>& sigma) {
  if (x.rank() < 3) throw std::runtime_error("gmf_membership: input must be rank >= 3");
  if (mu.rank() != 2 || sigma.shape() != mu.shape())
    throw std::runtime_error("gmf_membership: mu and sigma must both be [m,C]");
  const int N = x.dim(0), C = x.dim(1);
  const int m = mu.dim(0);
  if (mu.dim(1) != C)
    throw std::runtime_error("gmf_membership: parameter channels " + std::to_string(mu.dim(1)) +
                             " do not match input channels " + std::to_string(C));
  for (std::int64_t i = 0; i < sigma.numel(); ++i)
    if (!(sigma.data()[i] > T(0))) throw std::runtime_error("gmf_membership: sigma must be positive");
  std::int64_t V = 1;
  Shape oshape{N, m};
  for (int i = 1; i < x.rank(); ++i) oshape.push_back(x.dim(i));
  for (int i = 2; i < x.rank(); ++i) V *= x.dim(i);

  const bool rec = detail::want_grad(tape, {&x, &mu, &sigma});
  TensorT<T> y(oshape, rec);
  const T* xp = x.data();
  const T* mp = mu.data();
  const T* sp = sigma.data();
  T* yp = y.data();
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < C; ++c) {
        const T muv = mp[i * C + c];
        const T sv = sp[i * C + c];
        const T inv2s2 = T(1) / (T(2) * sv * sv);
        const std::int64_t xb = (static_cast<std::int64_t>(n) * C + c) * V;
        const std::int64_t yb = ((static_cast<std::int64_t>(n) * m + i) * C + c) * V;
        for (std::int64_t v = 0; v < V; ++v) {
          const T d = xp[xb + v] - muv;
          yp[yb + v] = std::exp(-d * d * inv2s2);
        }
      }
  ensure_finite(y, "gmf_membership");
  if (rec) {
    tape->record("gmf_membership", [=]() mutable {
      const T* gyp = y.grad();
      const T* yq = y.data();
      const T* xq = x.data();
      const T* mq = mu.data();
      const T* sq = sigma.data();
      for (int n = 0; n < N; ++n)
        for (int i = 0; i < m; ++i)
          for (int c = 0; c < C; ++c) {
            const T muv = mq[i * C + c];
            const T sv = sq[i * C + c];
            const T inv_s2 = T(1) / (sv * sv);
            const std::int64_t xb = (static_cast<std::int64_t>(n) * C + c) * V;
            const std::int64_t yb = ((static_cast<std::int64_t>(n) * m + i) * C + c) * V;
            T acc_mu = T(0), acc_sigma = T(0);
            for (std::int64_t v = 0; v < V; ++v) {
              const T d = xq[xb + v] - muv;
              const T gf = gyp[yb + v] * yq[yb + v];
              if (x.requires_grad()) x.grad()[xb + v] += gf * (-d) * inv_s2;
              acc_mu += gf * d * inv_s2;
              acc_sigma += gf * d * d * inv_s2 / sv;
            }
            if (mu.requires_grad()) mu.grad()[i * C + c] += acc_mu;
            if (sigma.requires_grad()) sigma.grad()[i * C + c] += acc_sigma;
          }
    });
  }
  return y;
}

// Differentiable fuzzy OR: elementwise max over the membership axis.
// memberships:[N,m,C,spatial...] -> [N,C,spatial...].
template <typename T>
TensorT<T> fuzzy_or(TapeT<T>* tape, const TensorT<T>& memberships) {
  if (memberships.rank() < 4)
    throw std::runtime_error("fuzzy_or: expected [N,m,C,...] memberships");
  return max_over_axis(tape, memberships, 1).first;
}

// Squeeze-excitation parameters; reduction C -> C/r -> C without biases.
template <typename T>
struct SeParamsT {
  TensorT<T> reduce; // [C/r, C]
  TensorT<T> expand; // [C, C/r]

  static SeParamsT init(int C, int r, Rng& rng) {
    if (r < 1 || C % r != 0)
      throw std::runtime_error("se_layer: channels " + std::to_string(C) +
                               " not divisible by reduction " + std::to_string(r));
    SeParamsT p;
    const int Cr = C / r;
    p.reduce = TensorT<T>({Cr, C}, true);
    p.expand = TensorT<T>({C, Cr}, true);
    const T s1 = std::sqrt(T(2) / static_cast<T>(C));
    const T s2 = std::sqrt(T(2) / static_cast<T>(Cr));
    for (auto& v : p.reduce.vec()) v = static_cast<T>(rng.gaussian()) * s1;
    for (auto& v : p.expand.vec()) v = static_cast<T>(rng.gaussian()) * s2;
    return p;
  }

  std::vector<TensorT<T>*> params() { return {&reduce, &expand}; }
};

template <typename T>
TensorT<T> se_layer(TapeT<T>* tape, const TensorT<T>& x, const SeParamsT<T>& p) {
  TensorT<T> pooled = global_avg_pool(tape, x);           // [N,C]
  TensorT<T> h = linear(tape, pooled, p.reduce);          // [N,C/r]
  h = leaky_relu(tape, h);
  TensorT<T> gate = sigmoid(tape, linear(tape, h, p.expand)); // [N,C]
  return mul_channelwise(tape, x, gate);
}

// Trainable gate parameters: m gaussian membership functions per channel.
// sigma is reparametrized as softplus(rho) + 1e-4 to stay positive; rho is
// initialized so that sigma starts at 1.
template <typename T>
struct GmfParamsT {
  TensorT<T> mu;  // [m, C]
  TensorT<T> rho; // [m, C]

  static GmfParamsT init(int C, int m, Rng& rng) {
    GmfParamsT p;
    p.mu = TensorT<T>({m, C}, true);
    p.rho = TensorT<T>({m, C}, true);
    for (auto& v : p.mu.vec()) v = static_cast<T>(rng.gaussian());
    const T rho0 = std::log(std::exp(T(1) - T(1e-4)) - T(1));
    for (auto& v : p.rho.vec()) v = rho0;
    return p;
  }

  std::vector<TensorT<T>*> params() { return {&mu, &rho}; }
};

// What the attention map multiplies: the SE-processed encoder branch, or the
// combined (added) features that feed the gate.
enum class GateTarget { encoder, sum };

template <typename T>
struct FuzzyAttentionParamsT {
  GmfParamsT<T> gmf;
  SeParamsT<T> se_enc;
  SeParamsT<T> se_dec;
  bool identity_gate = false;
  GateTarget gate_target = GateTarget::encoder;

  static FuzzyAttentionParamsT init(int C, int m, int r, Rng& rng, bool identity = false) {
    FuzzyAttentionParamsT p;
    p.gmf = GmfParamsT<T>::init(C, m, rng);
    p.se_enc = SeParamsT<T>::init(C, r, rng);
    p.se_dec = SeParamsT<T>::init(C, r, rng);
    p.identity_gate = identity;
    return p;
  }

  std::vector<TensorT<T>*> params() {
    return {&gmf.mu, &gmf.rho, &se_enc.reduce, &se_enc.expand, &se_dec.reduce, &se_dec.expand};
  }
};

template <typename T>
struct FuzzyAttentionOut {
  TensorT<T> attended; // alpha applied to the reconstituted encoder feature
  TensorT<T> alpha;    // channel-specific attention map in [0,1]
};

// Fuzzy attention gate over an encoder/decoder feature pair of equal shape:
// instance norm + leaky relu on each branch, one SE block per branch,
// voxelwise add + leaky relu, then per-channel gaussian memberships reduced
// by fuzzy OR into the attention map. With identity_gate the map is all ones
// and the module passes the encoder branch through unchanged.
template <typename T>
FuzzyAttentionOut<T> fuzzy_attention_module(TapeT<T>* tape, const TensorT<T>& enc,
                                            const TensorT<T>& dec,
                                            const FuzzyAttentionParamsT<T>& p) {
  if (enc.shape() != dec.shape())
    throw std::runtime_error("fuzzy_attention: encoder and decoder feature shapes differ: " +
                             shape_str(enc.shape()) + " vs " + shape_str(dec.shape()));
  TensorT<T> e = leaky_relu(tape, instance_norm(tape, enc));
  TensorT<T> d = leaky_relu(tape, instance_norm(tape, dec));
  e = se_layer(tape, e, p.se_enc);
  d = se_layer(tape, d, p.se_dec);
  if (p.identity_gate) {
    FuzzyAttentionOut<T> out;
    out.alpha = TensorT<T>::ones(e.shape());
    out.attended = e;
    return out;
  }
  TensorT<T> s = leaky_relu(tape, add(tape, e, d));
  TensorT<T> sigma = add_scalar(tape, softplus(tape, p.gmf.rho), T(1e-4));
  TensorT<T> memb = gmf_membership(tape, s, p.gmf.mu, sigma);
  FuzzyAttentionOut<T> out;
  out.alpha = fuzzy_or(tape, memb);
  out.attended = mul(tape, out.alpha, p.gate_target == GateTarget::encoder ? e : s);
  return out;
}

} // namespace fabr
