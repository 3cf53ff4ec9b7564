#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fabr/fuzzy.hpp"
#include "fabr/ops.hpp"
#include "fabr/rng.hpp"
#include "fabr/tape.hpp"
#include "fabr/tensor.hpp"

namespace fabr {

// How the gated skip feature joins the upsampled decoder feature.
enum class SkipFusion { concat, add };

constexpr int kNumScales = 4;

struct BackboneConfig {
  int in_channels = 1;
  std::array<int, kNumScales> stage_channels = {8, 16, 32, 64};
  int kernel = 3;    // depthwise kernel edge; odd
  int expansion = 4; // pointwise expansion factor inside a block
  int groups = 4;    // group-norm group count
  int gmf_count = 4; // membership functions per channel in the skip gates
  int se_reduction = 4;
  bool identity_gate = false; // bypass the fuzzy gates (ablation)
  GateTarget gate_target = GateTarget::encoder;
  SkipFusion skip_fusion = SkipFusion::concat;

  void validate() const {
    if (in_channels < 1) throw std::runtime_error("backbone: in_channels must be >= 1");
    if (kernel < 1 || kernel % 2 == 0)
      throw std::runtime_error("backbone: kernel must be odd, got " + std::to_string(kernel));
    if (expansion < 1) throw std::runtime_error("backbone: expansion must be >= 1");
    if (groups < 1) throw std::runtime_error("backbone: groups must be >= 1");
    if (gmf_count < 1) throw std::runtime_error("backbone: gmf_count must be >= 1");
    for (int s = 0; s < kNumScales; ++s) {
      const int c = stage_channels[s];
      if (c < 1) throw std::runtime_error("backbone: stage channels must be positive");
      if (s > 0 && c <= stage_channels[s - 1])
        throw std::runtime_error("backbone: stage channels must be strictly increasing");
      if (c % groups != 0)
        throw std::runtime_error("backbone: stage channel " + std::to_string(c) +
                                 " not divisible by group count " + std::to_string(groups));
      if (se_reduction < 1 || c % se_reduction != 0)
        throw std::runtime_error("backbone: stage channel " + std::to_string(c) +
                                 " not divisible by SE reduction " + std::to_string(se_reduction));
    }
  }
};

namespace detail {

// Gain 2 (He) ahead of a halving nonlinearity, gain 1 (Xavier) for purely
// linear layers — a linear chain of gain-2 layers doubles activation variance
// at every step and drives the head logits into sigmoid saturation.
template <typename T>
void he_fill(TensorT<T>& t, std::int64_t fan_in, Rng& rng) {
  const T s = std::sqrt(T(2) / static_cast<T>(fan_in));
  for (auto& v : t.vec()) v = static_cast<T>(rng.gaussian()) * s;
}

template <typename T>
void xavier_fill(TensorT<T>& t, std::int64_t fan_in, Rng& rng) {
  const T s = std::sqrt(T(1) / static_cast<T>(fan_in));
  for (auto& v : t.vec()) v = static_cast<T>(rng.gaussian()) * s;
}

} // namespace detail

// One transformer-like convolution block: depthwise conv -> group norm ->
// 4x pointwise expansion -> GELU -> pointwise compression -> residual add.
template <typename T>
struct ConvNextBlockParamsT {
  TensorT<T> dw;       // [C,k,k,k]
  TensorT<T> gn_gamma; // [C]
  TensorT<T> gn_beta;  // [C]
  TensorT<T> pw1_w;    // [eC, C]
  TensorT<T> pw1_b;    // [eC]
  TensorT<T> pw2_w;    // [C, eC]
  TensorT<T> pw2_b;    // [C]

  static ConvNextBlockParamsT init(int C, int k, int e, Rng& rng) {
    ConvNextBlockParamsT p;
    p.dw = TensorT<T>({C, k, k, k}, true);
    detail::he_fill(p.dw, static_cast<std::int64_t>(k) * k * k, rng);
    p.gn_gamma = TensorT<T>::ones({C}, true);
    p.gn_beta = TensorT<T>::zeros({C}, true);
    p.pw1_w = TensorT<T>({e * C, C}, true);
    detail::he_fill(p.pw1_w, C, rng);
    p.pw1_b = TensorT<T>::zeros({e * C}, true);
    p.pw2_w = TensorT<T>({C, e * C}, true);
    detail::he_fill(p.pw2_w, static_cast<std::int64_t>(e) * C, rng);
    // Damp the residual branch at init so a deep stack of blocks starts close
    // to the identity; otherwise activations compound across scales and the
    // head logits begin deep inside sigmoid saturation.
    for (auto& v : p.pw2_w.vec()) v *= T(0.1);
    p.pw2_b = TensorT<T>::zeros({C}, true);
    return p;
  }

  void collect(std::vector<TensorT<T>*>& out) {
    for (auto* t : {&dw, &gn_gamma, &gn_beta, &pw1_w, &pw1_b, &pw2_w, &pw2_b}) out.push_back(t);
  }
};

template <typename T>
TensorT<T> convnext_block(TapeT<T>* tape, const TensorT<T>& x, const ConvNextBlockParamsT<T>& p,
                          int groups) {
  if (x.rank() != 5 || x.dim(1) != p.dw.dim(0))
    throw std::runtime_error("convnext_block: input channels " +
                             std::to_string(x.rank() == 5 ? x.dim(1) : -1) +
                             " do not match block width " + std::to_string(p.dw.dim(0)));
  TensorT<T> h = conv3d_depthwise(tape, x, p.dw, 1, Pad::same);
  h = group_norm(tape, h, groups, p.gn_gamma, p.gn_beta);
  h = gelu(tape, conv3d_pointwise(tape, h, p.pw1_w, &p.pw1_b));
  h = conv3d_pointwise(tape, h, p.pw2_w, &p.pw2_b);
  return add(tape, h, x);
}

// Resolution-changing blocks: stride-2 depthwise conv (down) or stride-2
// depthwise deconvolution (up), each followed by a channel-changing
// pointwise conv.
template <typename T>
struct ResampleParamsT {
  TensorT<T> dw;   // [C_in,k,k,k]
  TensorT<T> pw_w; // [C_out, C_in]
  TensorT<T> pw_b; // [C_out]

  static ResampleParamsT init(int c_in, int c_out, int k, Rng& rng) {
    ResampleParamsT p;
    p.dw = TensorT<T>({c_in, k, k, k}, true);
    detail::xavier_fill(p.dw, static_cast<std::int64_t>(k) * k * k, rng);
    p.pw_w = TensorT<T>({c_out, c_in}, true);
    detail::xavier_fill(p.pw_w, c_in, rng);
    p.pw_b = TensorT<T>::zeros({c_out}, true);
    return p;
  }

  void collect(std::vector<TensorT<T>*>& out) {
    for (auto* t : {&dw, &pw_w, &pw_b}) out.push_back(t);
  }
};

template <typename T>
TensorT<T> down_block(TapeT<T>* tape, const TensorT<T>& x, const ResampleParamsT<T>& p) {
  for (int i = 2; i < 5; ++i)
    if (x.dim(i) % 2 != 0)
      throw std::runtime_error("down_block: spatial dims must be even, got " +
                               shape_str(x.shape()));
  TensorT<T> h = conv3d_depthwise(tape, x, p.dw, 2, Pad::same);
  return conv3d_pointwise(tape, h, p.pw_w, &p.pw_b);
}

template <typename T>
TensorT<T> up_block(TapeT<T>* tape, const TensorT<T>& x, const ResampleParamsT<T>& p) {
  TensorT<T> h = deconv3d(tape, x, p.dw);
  return conv3d_pointwise(tape, h, p.pw_w, &p.pw_b);
}

template <typename T>
struct BackboneParamsT {
  BackboneConfig config;

  TensorT<T> stem_w; // [C1, in]
  TensorT<T> stem_b; // [C1]
  ConvNextBlockParamsT<T> stem_block;
  std::array<ResampleParamsT<T>, kNumScales - 1> down;      // scale s-1 -> s
  std::array<ConvNextBlockParamsT<T>, kNumScales - 1> enc;  // after each down
  ConvNextBlockParamsT<T> bottleneck;
  std::array<FuzzyAttentionParamsT<T>, kNumScales> fa;      // per scale, finest first
  std::array<ResampleParamsT<T>, kNumScales - 1> up;        // scale s+1 -> s
  std::array<TensorT<T>, kNumScales> fuse_w;                // [C_s, 2C_s] (concat fusion)
  std::array<TensorT<T>, kNumScales> fuse_b;                // [C_s]
  std::array<ConvNextBlockParamsT<T>, kNumScales> dec;
  std::array<TensorT<T>, kNumScales> head_w; // [1, C_s]
  std::array<TensorT<T>, kNumScales> head_b; // [1]

  // Parameter construction order is fixed; checkpoints rely on it.
  static BackboneParamsT init(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0xbacbull));
    BackboneParamsT p;
    p.config = cfg;
    const auto& ch = cfg.stage_channels;
    p.stem_w = TensorT<T>({ch[0], cfg.in_channels}, true);
    detail::xavier_fill(p.stem_w, cfg.in_channels, rng);
    p.stem_b = TensorT<T>::zeros({ch[0]}, true);
    p.stem_block = ConvNextBlockParamsT<T>::init(ch[0], cfg.kernel, cfg.expansion, rng);
    for (int s = 0; s + 1 < kNumScales; ++s) {
      p.down[s] = ResampleParamsT<T>::init(ch[s], ch[s + 1], cfg.kernel, rng);
      p.enc[s] = ConvNextBlockParamsT<T>::init(ch[s + 1], cfg.kernel, cfg.expansion, rng);
    }
    p.bottleneck = ConvNextBlockParamsT<T>::init(ch[kNumScales - 1], cfg.kernel, cfg.expansion, rng);
    for (int s = 0; s < kNumScales; ++s) {
      p.fa[s] = FuzzyAttentionParamsT<T>::init(ch[s], cfg.gmf_count, cfg.se_reduction, rng,
                                               cfg.identity_gate);
      p.fa[s].gate_target = cfg.gate_target;
    }
    for (int s = 0; s + 1 < kNumScales; ++s)
      p.up[s] = ResampleParamsT<T>::init(ch[s + 1], ch[s], cfg.kernel, rng);
    for (int s = 0; s < kNumScales; ++s) {
      if (cfg.skip_fusion == SkipFusion::concat) {
        p.fuse_w[s] = TensorT<T>({ch[s], 2 * ch[s]}, true);
        detail::xavier_fill(p.fuse_w[s], 2 * ch[s], rng);
        p.fuse_b[s] = TensorT<T>::zeros({ch[s]}, true);
      }
      p.dec[s] = ConvNextBlockParamsT<T>::init(ch[s], cfg.kernel, cfg.expansion, rng);
      p.head_w[s] = TensorT<T>({1, ch[s]}, true);
      detail::xavier_fill(p.head_w[s], ch[s], rng);
      p.head_b[s] = TensorT<T>::zeros({1}, true);
    }
    return p;
  }

  std::vector<TensorT<T>*> params() {
    std::vector<TensorT<T>*> out;
    out.push_back(&stem_w);
    out.push_back(&stem_b);
    stem_block.collect(out);
    for (int s = 0; s + 1 < kNumScales; ++s) {
      down[s].collect(out);
      enc[s].collect(out);
    }
    bottleneck.collect(out);
    for (int s = 0; s < kNumScales; ++s)
      for (auto* t : fa[s].params()) out.push_back(t);
    for (int s = 0; s + 1 < kNumScales; ++s) up[s].collect(out);
    for (int s = 0; s < kNumScales; ++s) {
      if (config.skip_fusion == SkipFusion::concat) {
        out.push_back(&fuse_w[s]);
        out.push_back(&fuse_b[s]);
      }
      dec[s].collect(out);
      out.push_back(&head_w[s]);
      out.push_back(&head_b[s]);
    }
    return out;
  }
};

// Closed-form trainable scalar count; must equal the allocated parameter sum.
inline std::int64_t parameter_count(const BackboneConfig& cfg) {
  cfg.validate();
  const auto& ch = cfg.stage_channels;
  const std::int64_t k3 = static_cast<std::int64_t>(cfg.kernel) * cfg.kernel * cfg.kernel;
  auto block = [&](std::int64_t c) {
    return c * k3 + 2 * c + (cfg.expansion * c * c + cfg.expansion * c) +
           (c * cfg.expansion * c + c);
  };
  auto resample = [&](std::int64_t ci, std::int64_t co) { return ci * k3 + co * ci + co; };
  auto gate = [&](std::int64_t c) {
    const std::int64_t se = 2 * (c / cfg.se_reduction) * c;
    return 2 * static_cast<std::int64_t>(cfg.gmf_count) * c + 2 * se;
  };
  std::int64_t n = ch[0] * cfg.in_channels + ch[0] + block(ch[0]); // stem
  for (int s = 0; s + 1 < kNumScales; ++s) n += resample(ch[s], ch[s + 1]) + block(ch[s + 1]);
  n += block(ch[kNumScales - 1]); // bottleneck
  for (int s = 0; s < kNumScales; ++s) n += gate(ch[s]);
  for (int s = 0; s + 1 < kNumScales; ++s) n += resample(ch[s + 1], ch[s]);
  for (int s = 0; s < kNumScales; ++s) {
    if (cfg.skip_fusion == SkipFusion::concat) n += ch[s] * 2 * ch[s] + ch[s];
    n += block(ch[s]) + ch[s] + 1; // decoder block + head
  }
  return n;
}

template <typename T>
struct CoarseOutputsT {
  // Index 0 is the finest scale (full resolution), index 3 the coarsest.
  std::array<TensorT<T>, kNumScales> logits; // [N,1,...]
  std::array<TensorT<T>, kNumScales> probs;  // sigmoid(logits)
  std::array<TensorT<T>, kNumScales> feats;  // decoder features, C_s channels
  std::array<TensorT<T>, kNumScales> alphas; // skip attention maps
};

template <typename T>
CoarseOutputsT<T> backbone_forward(TapeT<T>* tape, const TensorT<T>& x,
                                   const BackboneParamsT<T>& p) {
  const BackboneConfig& cfg = p.config;
  if (x.rank() != 5 || x.dim(1) != cfg.in_channels)
    throw std::runtime_error("backbone: expected input [N," + std::to_string(cfg.in_channels) +
                             ",H,W,D], got " + shape_str(x.shape()));
  for (int i = 2; i < 5; ++i)
    if (x.dim(i) % 8 != 0)
      throw std::runtime_error("backbone: spatial dims must be divisible by 8, got " +
                               shape_str(x.shape()));

  std::array<TensorT<T>, kNumScales> encoded;
  TensorT<T> h = conv3d_pointwise(tape, x, p.stem_w, &p.stem_b);
  encoded[0] = convnext_block(tape, h, p.stem_block, cfg.groups);
  for (int s = 0; s + 1 < kNumScales; ++s)
    encoded[s + 1] =
        convnext_block(tape, down_block(tape, encoded[s], p.down[s]), p.enc[s], cfg.groups);
  TensorT<T> bott = convnext_block(tape, encoded[kNumScales - 1], p.bottleneck, cfg.groups);

  CoarseOutputsT<T> out;
  TensorT<T> below;
  for (int s = kNumScales - 1; s >= 0; --s) {
    TensorT<T> d_in = (s == kNumScales - 1) ? bott : up_block(tape, below, p.up[s]);
    auto gated = fuzzy_attention_module(tape, encoded[s], d_in, p.fa[s]);
    out.alphas[s] = gated.alpha;
    TensorT<T> fused;
    if (cfg.skip_fusion == SkipFusion::concat) {
      TensorT<T> cat = concat_channels(tape, gated.attended, d_in);
      fused = conv3d_pointwise(tape, cat, p.fuse_w[s], &p.fuse_b[s]);
    } else {
      fused = add(tape, gated.attended, d_in);
    }
    TensorT<T> dfeat = convnext_block(tape, fused, p.dec[s], cfg.groups);
    out.feats[s] = dfeat;
    out.logits[s] = conv3d_pointwise(tape, dfeat, p.head_w[s], &p.head_b[s]);
    out.probs[s] = sigmoid(tape, out.logits[s]);
    below = dfeat;
  }
  return out;
}

using BackboneParams = BackboneParamsT<float>;
using CoarseOutputs = CoarseOutputsT<float>;

} // namespace fabr
