#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fabr/backbone.hpp"
#include "fabr/border.hpp"
#include "fabr/gradcheck.hpp"
#include "fabr/rng.hpp"
#include "fabr/volume.hpp"

using namespace fabr;

namespace {

constexpr double kSmoothTol = 1e-5;

// Independent reference: a voxel is border-vulnerable exactly when its value
// differs from the max over the 2x2x2 block that contains it.
std::vector<Coord> brute_force_bvp(const MaskU8& m) {
  std::vector<Coord> out;
  for (int x = 0; x < m.dims[0]; ++x)
    for (int y = 0; y < m.dims[1]; ++y)
      for (int z = 0; z < m.dims[2]; ++z) {
        const int bx = (x / 2) * 2, by = (y / 2) * 2, bz = (z / 2) * 2;
        std::uint8_t mx = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) mx = std::max(mx, m.at(bx + a, by + b, bz + c));
        if (m.at(x, y, z) != mx) out.push_back({x, y, z});
      }
  return out;
}

MaskU8 random_mask(int side, double density, Rng& rng) {
  MaskU8 m(side, side, side);
  for (auto& v : m.v) v = static_cast<std::uint8_t>(rng.uniform() < density);
  return m;
}

} // namespace

TEST_CASE("bvp detection: degenerate and hand-constructed cases") {
  MaskU8 zero(4, 4, 4);
  CHECK(detect_bvp(zero).points.empty());

  // An even-aligned 2x2x2 block survives the pool/upsample round trip.
  MaskU8 aligned(4, 4, 4);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) aligned.at(2 + a, 2 + b, 2 + c) = 1;
  CHECK(detect_bvp(aligned).points.empty());

  // A lone voxel smears into its whole block: the 7 reconstructed-but-empty
  // voxels are vulnerable, the source voxel itself is not.
  MaskU8 lone(4, 4, 4);
  lone.at(0, 0, 0) = 1;
  auto bvp = detect_bvp(lone);
  REQUIRE(bvp.points.size() == 7);
  for (const auto& p : bvp.points) {
    CHECK(p[0] < 2);
    CHECK(p[1] < 2);
    CHECK(p[2] < 2);
    CHECK(!(p[0] == 0 && p[1] == 0 && p[2] == 0));
  }
}

TEST_CASE("bvp detection rejects odd dims and non-binary masks") {
  MaskU8 odd(3, 4, 4);
  CHECK_THROWS_WITH_AS(detect_bvp(odd), doctest::Contains("dims must be even"),
                       std::runtime_error);
  MaskU8 bad(4, 4, 4);
  bad.at(1, 1, 1) = 2;
  CHECK_THROWS_WITH_AS(detect_bvp(bad), doctest::Contains("must be binary"), std::runtime_error);
}

TEST_CASE("bvp detection matches the brute-force reference on random masks") {
  Rng rng(1001);
  for (int trial = 0; trial < 100; ++trial) {
    MaskU8 m = random_mask(16, rng.uniform(0.05, 0.5), rng);
    auto got = detect_bvp(m);
    auto want = brute_force_bvp(m);
    REQUIRE(got.points.size() == want.size());
    CHECK(std::equal(got.points.begin(), got.points.end(), want.begin()));
    // Lexicographic emission order.
    CHECK(std::is_sorted(got.points.begin(), got.points.end()));
    // Every vulnerable point sits in a block touching the foreground.
    for (const auto& p : got.points) {
      const int bx = (p[0] / 2) * 2, by = (p[1] / 2) * 2, bz = (p[2] / 2) * 2;
      int fg = 0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int c = 0; c < 2; ++c) fg += m.at(bx + a, by + b, bz + c);
      CHECK(fg > 0);
    }
  }
}

TEST_CASE("bvp count scales with surface area for misaligned solid cubes") {
  std::vector<std::size_t> counts;
  for (int side : {4, 8, 16}) {
    MaskU8 m(32, 32, 32);
    for (int x = 0; x < side; ++x)
      for (int y = 0; y < side; ++y)
        for (int z = 0; z < side; ++z) m.at(1 + x, 1 + y, 1 + z) = 1; // offset breaks alignment
    counts.push_back(detect_bvp(m).points.size());
  }
  CHECK(counts[0] < counts[1]);
  CHECK(counts[1] < counts[2]);
  // Doubling the side quadruples (not octuples) the count: surface growth.
  const double ratio = static_cast<double>(counts[2]) / static_cast<double>(counts[1]);
  CHECK(ratio > 2.0);
  CHECK(ratio < 6.0);
}

TEST_CASE("adjacent coordinates map between scales") {
  CHECK(coarser_coord({5, 7, 9}) == Coord{2, 3, 4});
  CHECK(finer_coord({2, 3, 4}) == Coord{4, 6, 8});
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    Coord p = {static_cast<int>(rng.below(16)), static_cast<int>(rng.below(16)),
               static_cast<int>(rng.below(16))};
    CHECK(coarser_coord(finer_coord(p)) == p);
  }
  CHECK(adjacent_scale(0) == 1);
  CHECK(adjacent_scale(1) == 2);
  CHECK(adjacent_scale(2) == 3);
  CHECK(adjacent_scale(3) == 2); // coarsest scale leans on its finer neighbor
}

TEST_CASE("cube gather: constant fields, corners, ordering, center toggle") {
  const int C = 3;
  Tensor feats = Tensor::full({1, C, 4, 4, 4}, 2.5f);
  std::vector<Coord> interior = {{1, 1, 1}};
  Tensor nc = gather_cube<float>(nullptr, feats, interior, false);
  REQUIRE(nc.shape() == Shape{1, 26 * C});
  for (std::int64_t i = 0; i < nc.numel(); ++i) CHECK(nc.data()[i] == 2.5f);
  Tensor wc = gather_cube<float>(nullptr, feats, interior, true);
  REQUIRE(wc.shape() == Shape{1, 27 * C});

  std::vector<Coord> corner = {{0, 0, 0}};
  Tensor cg = gather_cube<float>(nullptr, feats, corner, false);
  int nonzero_offsets = 0;
  for (int o = 0; o < 26; ++o)
    if (cg.data()[o * C] != 0.0f) ++nonzero_offsets;
  CHECK(nonzero_offsets == 7);

  // Offset-major layout: first block of an interior gather is the
  // (-1,-1,-1) neighbor's channels.
  Tensor field({1, C, 4, 4, 4});
  for (std::int64_t i = 0; i < field.numel(); ++i) field.data()[i] = static_cast<float>(i);
  Tensor g = gather_cube<float>(nullptr, field, interior, false);
  for (int c = 0; c < C; ++c) CHECK(g.data()[c] == field.data()[c * 64 + 0]); // voxel (0,0,0)

  std::vector<Coord> oob = {{4, 0, 0}};
  CHECK_THROWS_WITH_AS(gather_cube<float>(nullptr, feats, oob, false),
                       doctest::Contains("out of bounds"), std::runtime_error);
  CHECK_THROWS_WITH_AS(gather_points<float>(nullptr, feats, oob),
                       doctest::Contains("out of bounds"), std::runtime_error);
}

TEST_CASE("point and cube gathers are differentiable with scatter-add backward") {
  Rng rng(3);
  Tensor64 feats({1, 2, 3, 3, 3}, true);
  for (auto& v : feats.vec()) v = rng.uniform(-1.0, 1.0);
  // Overlapping cubes force gradient accumulation on shared voxels.
  std::vector<Coord> pts = {{0, 0, 0}, {1, 1, 1}, {1, 1, 2}};
  Tensor64 w({3, 2 * 26}, true);
  for (auto& v : w.vec()) v = rng.uniform(-0.5, 0.5);
  auto res = GradCheck().check(
      [&](Tape64* tape) {
        Tensor64 a = linear(tape, gather_cube(tape, feats, pts, false), w);
        Tensor64 b = gather_points(tape, feats, pts);
        return concat_channels(tape, reshape(tape, a, {1, 3 * 3}), reshape(tape, b, {1, 6}));
      },
      {&feats, &w});
  CHECK(res.max_rel_err < kSmoothTol);
  CHECK(res.checked > 0);
}

TEST_CASE("position features are deterministic and collision-free over a full grid") {
  std::vector<Coord> all;
  for (int x = 0; x < 16; ++x)
    for (int y = 0; y < 16; ++y)
      for (int z = 0; z < 16; ++z) all.push_back({x, y, z});
  Tensor f = position_features<float>(all, {16, 16, 16});
  REQUIRE(f.shape() == Shape{4096, kPeWidth});
  Tensor f2 = position_features<float>(all, {16, 16, 16});
  CHECK(std::memcmp(f.data(), f2.data(), sizeof(float) * f.numel()) == 0);

  std::vector<std::vector<float>> rows(4096);
  for (int i = 0; i < 4096; ++i)
    rows[i].assign(f.data() + std::int64_t(i) * kPeWidth, f.data() + std::int64_t(i + 1) * kPeWidth);
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
}

TEST_CASE("feature fusion matches a hand-computed weighted sum") {
  Rng rng(4);
  auto rand2 = [&](int p, int d) {
    Tensor t({p, d});
    for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
  };
  const int P = 5, d = 7;
  Tensor cg = rand2(P, d), ct = rand2(P, d), fg = rand2(P, d), g = rand2(P, d);
  const float l1 = 0.3f, l2 = 0.9f, l3 = 0.1f, l4 = 0.7f;
  Tensor out = fuse_features<float>(nullptr, cg, ct, fg, g, Tensor::full({1}, l1),
                                    Tensor::full({1}, l2), Tensor::full({1}, l3),
                                    Tensor::full({1}, l4));
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const float want = l1 * cg.data()[i] + l2 * ct.data()[i] + l3 * fg.data()[i] + l4 * g.data()[i];
    CHECK(out.data()[i] == doctest::Approx(want).epsilon(1e-6));
  }
  // Degenerate weights: only the global feature survives.
  Tensor only_g = fuse_features<float>(nullptr, cg, ct, fg, g, Tensor::zeros({1}),
                                       Tensor::zeros({1}), Tensor::zeros({1}), Tensor::ones({1}));
  for (std::int64_t i = 0; i < only_g.numel(); ++i) CHECK(only_g.data()[i] == g.data()[i]);
  Tensor none = fuse_features<float>(nullptr, cg, ct, fg, g, Tensor::zeros({1}),
                                     Tensor::zeros({1}), Tensor::zeros({1}), Tensor::zeros({1}));
  for (std::int64_t i = 0; i < none.numel(); ++i) CHECK(none.data()[i] == 0.0f);
}

TEST_CASE("layer refinement: counts, order independence, and gradients") {
  Rng rng(5);
  auto layer = GlcfLayerParamsT<float>::init(6, 2, 3, rng);
  Tensor feats = Tensor::randn({1, 2, 4, 4, 4}, rng);
  Tensor adj = Tensor::randn({1, 3, 2, 2, 2}, rng);
  std::vector<Coord> pts = {{0, 0, 0}, {3, 3, 3}, {1, 2, 0}, {2, 1, 3}};
  Tensor logits = refine_layer<float>(nullptr, feats, adj, pts, 0, layer);
  REQUIRE(logits.shape() == Shape{4});

  std::vector<int> perm = {2, 0, 3, 1};
  std::vector<Coord> shuffled(4);
  for (int i = 0; i < 4; ++i) shuffled[i] = pts[perm[i]];
  Tensor logits_p = refine_layer<float>(nullptr, feats, adj, shuffled, 0, layer);
  for (int i = 0; i < 4; ++i) CHECK(logits_p.data()[i] == logits.data()[perm[i]]);

  auto layer64 = GlcfLayerParamsT<double>::init(4, 2, 3, rng);
  Tensor64 f64({1, 2, 4, 4, 4}, true);
  Tensor64 a64({1, 3, 2, 2, 2}, true);
  for (auto& v : f64.vec()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : a64.vec()) v = rng.uniform(-1.0, 1.0);
  std::vector<Tensor64*> leaves = {&f64, &a64};
  layer64.collect(leaves);
  auto res = GradCheck().check(
      [&](Tape64* tape) { return refine_layer<double>(tape, f64, a64, pts, 0, layer64); },
      leaves);
  CHECK(res.max_rel_err < kSmoothTol);
  CHECK(res.checked > 0);
}

TEST_CASE("refinement over all scales consumes backbone features") {
  BackboneConfig cfg;
  cfg.stage_channels = {4, 8, 12, 16};
  cfg.gmf_count = 2;
  auto bb = BackboneParamsT<float>::init(cfg, 21);
  GlcfConfig gcfg;
  gcfg.fusion_dims = {4, 4, 8, 8};
  auto glcf = GlcfParamsT<float>::init(gcfg, cfg, 22);
  Rng rng(23);
  Tensor x = Tensor::randn({1, 1, 16, 16, 16}, rng);
  auto coarse = backbone_forward<float>(nullptr, x, bb);

  std::array<BvpSet, kNumScales> bvps;
  MaskU8 gt(16, 16, 16);
  for (int i = 0; i < 16; ++i) gt.at(i, 7, 7) = 1; // thin line: plenty of BVPs
  auto pyr = mask_pyramid(gt, kNumScales);
  for (int s = 0; s < kNumScales; ++s) bvps[s] = detect_bvp(pyr[s], s);
  REQUIRE(bvps[0].points.size() > 0);

  auto logits = refine_points<float>(nullptr, coarse, bvps, glcf);
  for (int s = 0; s < kNumScales; ++s) {
    if (bvps[s].points.empty()) {
      CHECK(!logits[s].defined());
    } else {
      REQUIRE(logits[s].defined());
      CHECK(logits[s].numel() == static_cast<std::int64_t>(bvps[s].points.size()));
    }
  }
}

TEST_CASE("rendering overrides exactly the border points") {
  Rng rng(6);
  Tensor probs({1, 1, 4, 4, 4});
  for (auto& v : probs.vec()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  MaskU8 base = render_mask<float>(probs, Tensor{}, {});
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z)
        CHECK(base.at(x, y, z) == static_cast<std::uint8_t>(probs.data()[(x * 4 + y) * 4 + z] > 0.5f));

  std::vector<Coord> pts = {{0, 0, 0}, {1, 2, 3}, {3, 3, 3}};
  Tensor logits = Tensor::from({3}, {10.0f, -10.0f, 10.0f});
  MaskU8 rendered = render_mask<float>(probs, logits, pts);
  CHECK(rendered.at(0, 0, 0) == 1);
  CHECK(rendered.at(1, 2, 3) == 0);
  CHECK(rendered.at(3, 3, 3) == 1);
  // Every non-border voxel is untouched, bit for bit.
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z) {
        const Coord c = {x, y, z};
        if (std::find(pts.begin(), pts.end(), c) != pts.end()) continue;
        CHECK(rendered.at(x, y, z) == base.at(x, y, z));
      }

  CHECK_THROWS_WITH_AS(render_mask<float>(probs, logits, {{0, 0, 0}, {4, 0, 0}, {1, 1, 1}}),
                       doctest::Contains("out of bounds"), std::runtime_error);
  CHECK_THROWS_WITH_AS(render_mask<float>(probs, Tensor::from({2}, {1.0f, 2.0f}), pts),
                       doctest::Contains("does not match point count"), std::runtime_error);
}
