#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fabr/backbone.hpp"
#include "fabr/ops.hpp"
#include "fabr/rng.hpp"
#include "fabr/tensor.hpp"
#include "fabr/volume.hpp"

namespace fabr {

// ---------------------------------------------------------------------------
// Border-vulnerable point detection
// ---------------------------------------------------------------------------

// Points where a mask disagrees with its own downsample/upsample round trip:
// exactly the voxels that pooling cannot reconstruct, i.e. the places where
// thin structure and border detail live.
struct BvpSet {
  int layer = 0;               // scale index, 0 = finest
  std::vector<Coord> points;   // nonzero voxels of diff, lexicographic order
  MaskU8 pooled;               // factor-2 max-pool of the input
  MaskU8 restored;             // nearest-neighbor upsample of `pooled`
  MaskU8 diff;                 // |mask - restored|
};

inline BvpSet detect_bvp(const MaskU8& mask, int layer = 0) {
  for (int d : mask.dims)
    if (d % 2 != 0)
      throw std::runtime_error("detect_bvp: dims must be even, got " + std::to_string(d));
  for (std::uint8_t v : mask.v)
    if (v > 1) throw std::runtime_error("detect_bvp: mask must be binary");
  BvpSet out;
  out.layer = layer;
  out.pooled = maxpool2(mask);
  out.restored = upsample_nearest2(out.pooled);
  out.diff = MaskU8(mask.dims[0], mask.dims[1], mask.dims[2]);
  for (std::size_t i = 0; i < mask.v.size(); ++i)
    out.diff.v[i] = static_cast<std::uint8_t>(mask.v[i] != out.restored.v[i]);
  for (int x = 0; x < mask.dims[0]; ++x)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int z = 0; z < mask.dims[2]; ++z)
        if (out.diff.at(x, y, z)) out.points.push_back({x, y, z});
  return out;
}

// Coordinate mapping between adjacent scales.
inline Coord coarser_coord(const Coord& p) { return {p[0] / 2, p[1] / 2, p[2] / 2}; }
inline Coord finer_coord(const Coord& p) { return {2 * p[0], 2 * p[1], 2 * p[2]}; }

// The adjacent scale used for coarse-grain context: one step coarser, except
// at the coarsest scale where only the finer neighbor exists.
inline int adjacent_scale(int scale) { return scale + 1 < kNumScales ? scale + 1 : scale - 1; }

// ---------------------------------------------------------------------------
// Differentiable point gathers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_point_volume(const TensorT<T>& feats) {
  if (feats.rank() != 5 || feats.dim(0) != 1)
    throw std::runtime_error("gather: expected features [1,C,H,W,D], got " +
                             shape_str(feats.shape()));
}

} // namespace detail

// Centroid features: out[p, c] = feats[0, c, pt]. Points must be in bounds.
template <typename T>
TensorT<T> gather_points(TapeT<T>* tape, const TensorT<T>& feats,
                         const std::vector<Coord>& points) {
  detail::check_point_volume(feats);
  const int C = feats.dim(1), H = feats.dim(2), W = feats.dim(3), D = feats.dim(4);
  const int P = static_cast<int>(points.size());
  if (P == 0) throw std::runtime_error("gather_points: empty point set");
  for (const auto& p : points)
    if (p[0] < 0 || p[0] >= H || p[1] < 0 || p[1] >= W || p[2] < 0 || p[2] >= D)
      throw std::runtime_error("gather_points: point out of bounds");
  const bool rec = detail::want_grad(tape, {&feats});
  TensorT<T> out({P, C}, rec);
  const T* fp = feats.data();
  T* op = out.data();
  const std::int64_t sc = static_cast<std::int64_t>(H) * W * D;
  auto flat = [W, D](const Coord& p) {
    return (static_cast<std::int64_t>(p[0]) * W + p[1]) * D + p[2];
  };
  for (int i = 0; i < P; ++i) {
    const std::int64_t base = flat(points[i]);
    for (int c = 0; c < C; ++c) op[static_cast<std::int64_t>(i) * C + c] = fp[c * sc + base];
  }
  if (rec) {
    auto pts = points;
    tape->record("gather_points", [=]() {
      const T* g = out.grad();
      T* gf = feats.grad();
      for (int i = 0; i < P; ++i) {
        const std::int64_t base = flat(pts[i]);
        for (int c = 0; c < C; ++c) gf[c * sc + base] += g[static_cast<std::int64_t>(i) * C + c];
      }
    });
  }
  return out;
}

// 3x3x3 cube features around each point, flattened offset-major: the block
// [o*C, (o+1)*C) holds the channels of the o-th offset, offsets ordered
// lexicographically (-1,-1,-1)..(1,1,1), the centroid skipped when excluded.
// Out-of-bounds neighbors contribute zeros.
template <typename T>
TensorT<T> gather_cube(TapeT<T>* tape, const TensorT<T>& feats, const std::vector<Coord>& points,
                       bool include_center) {
  detail::check_point_volume(feats);
  const int C = feats.dim(1), H = feats.dim(2), W = feats.dim(3), D = feats.dim(4);
  const int P = static_cast<int>(points.size());
  if (P == 0) throw std::runtime_error("gather_cube: empty point set");
  for (const auto& p : points)
    if (p[0] < 0 || p[0] >= H || p[1] < 0 || p[1] >= W || p[2] < 0 || p[2] >= D)
      throw std::runtime_error("gather_cube: centroid out of bounds");
  std::vector<Coord> offsets;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        if (!include_center && dx == 0 && dy == 0 && dz == 0) continue;
        offsets.push_back({dx, dy, dz});
      }
  const int O = static_cast<int>(offsets.size());
  const bool rec = detail::want_grad(tape, {&feats});
  TensorT<T> out({P, O * C}, rec);
  const T* fp = feats.data();
  T* op = out.data();
  const std::int64_t sc = static_cast<std::int64_t>(H) * W * D;
  for (int i = 0; i < P; ++i)
    for (int o = 0; o < O; ++o) {
      const int x = points[i][0] + offsets[o][0];
      const int y = points[i][1] + offsets[o][1];
      const int z = points[i][2] + offsets[o][2];
      T* dst = op + (static_cast<std::int64_t>(i) * O + o) * C;
      if (x < 0 || x >= H || y < 0 || y >= W || z < 0 || z >= D) continue; // zeros
      const std::int64_t base = (static_cast<std::int64_t>(x) * W + y) * D + z;
      for (int c = 0; c < C; ++c) dst[c] = fp[c * sc + base];
    }
  if (rec) {
    auto pts = points;
    auto offs = offsets;
    tape->record("gather_cube", [=]() {
      const T* g = out.grad();
      T* gf = feats.grad();
      for (int i = 0; i < P; ++i)
        for (int o = 0; o < O; ++o) {
          const int x = pts[i][0] + offs[o][0];
          const int y = pts[i][1] + offs[o][1];
          const int z = pts[i][2] + offs[o][2];
          if (x < 0 || x >= H || y < 0 || y >= W || z < 0 || z >= D) continue;
          const std::int64_t base = (static_cast<std::int64_t>(x) * W + y) * D + z;
          const T* src = g + (static_cast<std::int64_t>(i) * O + o) * C;
          for (int c = 0; c < C; ++c) gf[c * sc + base] += src[c];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Position features
// ---------------------------------------------------------------------------

// Fixed sinusoidal features of the normalized coordinates: for each axis,
// sin/cos pairs at dyadic frequencies. The lowest pair alone is injective on
// [0,1), so distinct voxels always get distinct feature vectors.
constexpr int kPeFreqs = 8;
constexpr int kPeWidth = 3 * 2 * kPeFreqs; // 48

template <typename T>
TensorT<T> position_features(const std::vector<Coord>& points, const std::array<int, 3>& dims) {
  const int P = static_cast<int>(points.size());
  if (P == 0) throw std::runtime_error("position_features: empty point set");
  TensorT<T> out({P, kPeWidth});
  T* op = out.data();
  for (int i = 0; i < P; ++i)
    for (int a = 0; a < 3; ++a) {
      const T t = static_cast<T>(points[i][a]) / static_cast<T>(dims[a]);
      for (int f = 0; f < kPeFreqs; ++f) {
        const T arg = static_cast<T>(std::ldexp(1.0, f)) * static_cast<T>(M_PI) * t;
        op[(static_cast<std::int64_t>(i) * 3 + a) * 2 * kPeFreqs + 2 * f] = std::sin(arg);
        op[(static_cast<std::int64_t>(i) * 3 + a) * 2 * kPeFreqs + 2 * f + 1] = std::cos(arg);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

// F_ff = l1*F_cg + l2*F_ct + l3*F_fg + l4*F_g with scalar weights; weights
// come from sigmoid of raw parameters so they always sit in (0,1).
template <typename T>
TensorT<T> fuse_features(TapeT<T>* tape, const TensorT<T>& f_cg, const TensorT<T>& f_ct,
                         const TensorT<T>& f_fg, const TensorT<T>& f_g, const TensorT<T>& l1,
                         const TensorT<T>& l2, const TensorT<T>& l3, const TensorT<T>& l4) {
  if (f_cg.shape() != f_ct.shape() || f_cg.shape() != f_fg.shape() || f_cg.shape() != f_g.shape())
    throw std::runtime_error("fuse_features: all feature blocks must share [P,d]");
  TensorT<T> a = add(tape, scale_by(tape, f_cg, l1), scale_by(tape, f_ct, l2));
  TensorT<T> b = add(tape, scale_by(tape, f_fg, l3), scale_by(tape, f_g, l4));
  return add(tape, a, b);
}

// ---------------------------------------------------------------------------
// Refinement parameters and forward
// ---------------------------------------------------------------------------

struct GlcfConfig {
  std::array<int, kNumScales> fusion_dims = {32, 64, 128, 256}; // finest..coarsest

  void validate() const {
    for (int d : fusion_dims)
      if (d < 1) throw std::runtime_error("glcf: fusion dims must be positive");
  }
};

template <typename T>
struct GlcfLayerParamsT {
  TensorT<T> w_fg;    // [d, 26*C]
  TensorT<T> w_cg;    // [d, 27*C_adj]
  TensorT<T> w_ct;    // [d, C]
  TensorT<T> g_tilde; // [d] learnable global embedding
  TensorT<T> w_g;     // [d, d]
  TensorT<T> w_pe;    // [d, 48]
  TensorT<T> r1, r2, r3, r4; // raw fusion scalars, [1] each
  TensorT<T> mlp1_w;  // [d, d]
  TensorT<T> mlp1_b;  // [d]
  TensorT<T> mlp2_w;  // [1, d]
  TensorT<T> mlp2_b;  // [1]

  static GlcfLayerParamsT init(int d, int c, int c_adj, Rng& rng) {
    GlcfLayerParamsT p;
    p.w_fg = TensorT<T>({d, 26 * c}, true);
    detail::xavier_fill(p.w_fg, 26 * c, rng);
    p.w_cg = TensorT<T>({d, 27 * c_adj}, true);
    detail::xavier_fill(p.w_cg, 27 * c_adj, rng);
    p.w_ct = TensorT<T>({d, c}, true);
    detail::xavier_fill(p.w_ct, c, rng);
    p.g_tilde = TensorT<T>({d}, true);
    for (auto& v : p.g_tilde.vec()) v = static_cast<T>(rng.gaussian());
    p.w_g = TensorT<T>({d, d}, true);
    detail::xavier_fill(p.w_g, d, rng);
    p.w_pe = TensorT<T>({d, kPeWidth}, true);
    detail::xavier_fill(p.w_pe, kPeWidth, rng);
    // r = 0 puts every fusion weight at 0.5.
    p.r1 = TensorT<T>::zeros({1}, true);
    p.r2 = TensorT<T>::zeros({1}, true);
    p.r3 = TensorT<T>::zeros({1}, true);
    p.r4 = TensorT<T>::zeros({1}, true);
    p.mlp1_w = TensorT<T>({d, d}, true);
    detail::he_fill(p.mlp1_w, d, rng);
    p.mlp1_b = TensorT<T>::zeros({d}, true);
    p.mlp2_w = TensorT<T>({1, d}, true);
    detail::xavier_fill(p.mlp2_w, d, rng);
    p.mlp2_b = TensorT<T>::zeros({1}, true);
    return p;
  }

  void collect(std::vector<TensorT<T>*>& out) {
    for (auto* t : {&w_fg, &w_cg, &w_ct, &g_tilde, &w_g, &w_pe, &r1, &r2, &r3, &r4, &mlp1_w,
                    &mlp1_b, &mlp2_w, &mlp2_b})
      out.push_back(t);
  }
};

template <typename T>
struct GlcfParamsT {
  GlcfConfig config;
  std::array<GlcfLayerParamsT<T>, kNumScales> layer;

  static GlcfParamsT init(const GlcfConfig& cfg, const BackboneConfig& bb, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x91cfull));
    GlcfParamsT p;
    p.config = cfg;
    for (int s = 0; s < kNumScales; ++s) {
      const int c = bb.stage_channels[s];
      const int c_adj = bb.stage_channels[adjacent_scale(s)];
      p.layer[s] = GlcfLayerParamsT<T>::init(cfg.fusion_dims[s], c, c_adj, rng);
    }
    return p;
  }

  std::vector<TensorT<T>*> params() {
    std::vector<TensorT<T>*> out;
    for (int s = 0; s < kNumScales; ++s) layer[s].collect(out);
    return out;
  }
};

// Refined logits for one scale's border points. feats/adj_feats are the
// decoder features of the scale and of its context scale.
template <typename T>
TensorT<T> refine_layer(TapeT<T>* tape, const TensorT<T>& feats, const TensorT<T>& adj_feats,
                        const std::vector<Coord>& points, int scale,
                        const GlcfLayerParamsT<T>& p) {
  std::vector<Coord> adj_points(points.size());
  const bool to_coarser = adjacent_scale(scale) > scale;
  for (std::size_t i = 0; i < points.size(); ++i)
    adj_points[i] = to_coarser ? coarser_coord(points[i]) : finer_coord(points[i]);

  TensorT<T> f_fg = linear(tape, gather_cube(tape, feats, points, false), p.w_fg);
  TensorT<T> f_cg = linear(tape, gather_cube(tape, adj_feats, adj_points, true), p.w_cg);
  TensorT<T> f_ct = linear(tape, gather_points(tape, feats, points), p.w_ct);
  const int d = p.g_tilde.dim(0);
  TensorT<T> g_row = reshape(tape, linear(tape, reshape(tape, p.g_tilde, {1, d}), p.w_g), {d});
  TensorT<T> f_g = broadcast_rows(tape, g_row, static_cast<int>(points.size()));
  TensorT<T> f_ff = fuse_features(tape, f_cg, f_ct, f_fg, f_g, sigmoid(tape, p.r1),
                                  sigmoid(tape, p.r2), sigmoid(tape, p.r3), sigmoid(tape, p.r4));

  const std::array<int, 3> dims = {feats.dim(2), feats.dim(3), feats.dim(4)};
  TensorT<T> pe_raw = position_features<T>(points, dims);
  TensorT<T> f_pe = linear(tape, pe_raw, p.w_pe);

  TensorT<T> h = gelu(tape, linear(tape, add(tape, f_ff, f_pe), p.mlp1_w, &p.mlp1_b));
  TensorT<T> logit = linear(tape, h, p.mlp2_w, &p.mlp2_b); // [P,1]
  return reshape(tape, logit, {static_cast<int>(points.size())});
}

// All scales at once; entry s is left undefined when its point set is empty.
template <typename T>
std::array<TensorT<T>, kNumScales> refine_points(TapeT<T>* tape, const CoarseOutputsT<T>& coarse,
                                                 const std::array<BvpSet, kNumScales>& bvps,
                                                 const GlcfParamsT<T>& params) {
  std::array<TensorT<T>, kNumScales> out;
  for (int s = 0; s < kNumScales; ++s) {
    if (bvps[s].points.empty()) continue;
    out[s] = refine_layer(tape, coarse.feats[s], coarse.feats[adjacent_scale(s)], bvps[s].points,
                          s, params.layer[s]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Final mask: binarized coarse probabilities everywhere except the border
// points, which take the refined prediction. sigmoid(logit) > tau with
// tau = 0.5 is exactly logit > 0, so refinement thresholds logits directly.
template <typename T>
MaskU8 render_mask(const TensorT<T>& coarse_probs, const TensorT<T>& refined_logits,
                   const std::vector<Coord>& points, T tau = T(0.5)) {
  if (coarse_probs.rank() != 5 || coarse_probs.dim(0) != 1 || coarse_probs.dim(1) != 1)
    throw std::runtime_error("render: expected probabilities [1,1,H,W,D]");
  const int H = coarse_probs.dim(2), W = coarse_probs.dim(3), D = coarse_probs.dim(4);
  MaskU8 final_mask(H, W, D);
  const T* pp = coarse_probs.data();
  for (std::size_t i = 0; i < final_mask.v.size(); ++i)
    final_mask.v[i] = static_cast<std::uint8_t>(pp[i] > tau);
  if (points.empty()) return final_mask;
  if (static_cast<std::int64_t>(points.size()) != refined_logits.numel())
    throw std::runtime_error("render: refined logit count does not match point count");
  const T* rl = refined_logits.data();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Coord& p = points[i];
    if (!final_mask.in_bounds(p))
      throw std::runtime_error("render: point out of bounds");
    final_mask.at(p[0], p[1], p[2]) = static_cast<std::uint8_t>(rl[i] > T(0));
  }
  return final_mask;
}

using GlcfLayerParams = GlcfLayerParamsT<float>;
using GlcfParams = GlcfParamsT<float>;

} // namespace fabr
