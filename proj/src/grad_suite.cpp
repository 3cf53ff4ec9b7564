#include "fabr/grad_suite.hpp"

#include <cstdio>
#include <functional>
#include <utility>

#include "fabr/fuzzy.hpp"
#include "fabr/gradcheck.hpp"
#include "fabr/losses.hpp"
#include "fabr/ops.hpp"
#include "fabr/rng.hpp"

namespace fabr {
namespace {

constexpr double kSmoothTol = 1e-5;
constexpr double kKinkedTol = 1e-3;

Tensor64 leaf(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor64 t(std::move(shape), true);
  for (auto& v : t.vec()) v = rng.gaussian() * scale;
  return t;
}

// Probabilities kept away from 0 and 1: the log terms in the cross entropy
// have third derivatives ~1/p^3, so central differences near the endpoints
// carry genuine truncation error that would mask real gradient bugs.
Tensor64 prob_leaf(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor64 t(std::move(shape), true);
  for (auto& v : t.vec()) v = 0.25 + 0.5 * rng.uniform();
  return t;
}

Tensor64 binary_target(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor64 t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

struct Case {
  const char* name;
  double tol;
  std::function<GradCheckResult()> run;
};

GradSuiteEntry run_case(const Case& c) {
  GradCheckResult r = c.run();
  GradSuiteEntry e;
  e.name = c.name;
  e.max_rel_err = r.max_rel_err;
  e.tol = c.tol;
  e.checked = r.checked;
  e.skipped = r.skipped;
  e.pass = r.checked > 0 && r.max_rel_err <= c.tol;
  return e;
}

} // namespace

std::vector<GradSuiteEntry> run_gradient_suite() {
  GradCheck gc;
  std::vector<Case> cases;

  cases.push_back({"conv3d_depthwise stride1 same", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({1, 2, 6, 6, 6}, 101);
                     Tensor64 k = leaf({2, 3, 3, 3}, 201, 0.5);
                     return gc.check(
                         [&](Tape64* t) { return conv3d_depthwise<double>(t, x, k, 1, Pad::same); },
                         {&x, &k});
                   }});
  cases.push_back({"conv3d_depthwise stride2 same", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({1, 2, 6, 6, 6}, 102);
                     Tensor64 k = leaf({2, 3, 3, 3}, 202, 0.5);
                     return gc.check(
                         [&](Tape64* t) { return conv3d_depthwise<double>(t, x, k, 2, Pad::same); },
                         {&x, &k});
                   }});
  cases.push_back({"conv3d_depthwise valid", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({1, 2, 6, 6, 6}, 103);
                     Tensor64 k = leaf({2, 3, 3, 3}, 203, 0.5);
                     return gc.check(
                         [&](Tape64* t) { return conv3d_depthwise<double>(t, x, k, 1, Pad::valid); },
                         {&x, &k});
                   }});
  cases.push_back({"conv3d_pointwise + bias", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 3, 4, 4, 4}, 110);
                     Tensor64 w = leaf({4, 3}, 111, 0.5);
                     Tensor64 b = leaf({4}, 112, 0.2);
                     return gc.check(
                         [&](Tape64* t) { return conv3d_pointwise<double>(t, x, w, &b); },
                         {&x, &w, &b});
                   }});
  cases.push_back({"deconv3d", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({1, 2, 3, 3, 3}, 120);
                     Tensor64 k = leaf({2, 3, 3, 3}, 121, 0.5);
                     return gc.check([&](Tape64* t) { return deconv3d<double>(t, x, k); },
                                     {&x, &k});
                   }});
  cases.push_back({"group_norm affine", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 4, 3, 3, 3}, 130, 2.0);
                     Tensor64 gamma = leaf({4}, 131, 0.5);
                     Tensor64 beta = leaf({4}, 132, 0.5);
                     return gc.check(
                         [&](Tape64* t) { return group_norm<double>(t, x, 2, gamma, beta); },
                         {&x, &gamma, &beta});
                   }});
  cases.push_back({"instance_norm", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 3, 3, 3, 3}, 140, 2.0);
                     return gc.check([&](Tape64* t) { return instance_norm<double>(t, x); }, {&x});
                   }});
  cases.push_back({"gelu", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({40}, 150, 1.5);
                     return gc.check([&](Tape64* t) { return gelu<double>(t, x); }, {&x});
                   }});
  cases.push_back({"sigmoid", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({40}, 151, 1.5);
                     return gc.check([&](Tape64* t) { return sigmoid<double>(t, x); }, {&x});
                   }});
  cases.push_back({"softplus", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({40}, 152, 1.5);
                     return gc.check([&](Tape64* t) { return softplus<double>(t, x); }, {&x});
                   }});
  cases.push_back({"leaky_relu (kinked)", kKinkedTol, [&gc] {
                     Tensor64 x = leaf({64}, 160);
                     return gc.check([&](Tape64* t) { return leaky_relu<double>(t, x); }, {&x});
                   }});
  cases.push_back({"max_over_axis (kinked)", kKinkedTol, [&gc] {
                     Tensor64 x = leaf({3, 5, 4}, 170);
                     return gc.check(
                         [&](Tape64* t) { return max_over_axis<double>(t, x, 1).first; }, {&x});
                   }});
  cases.push_back({"add", kSmoothTol, [&gc] {
                     Tensor64 a = leaf({2, 3, 2, 2, 2}, 180);
                     Tensor64 b = leaf({2, 3, 2, 2, 2}, 181);
                     return gc.check([&](Tape64* t) { return add<double>(t, a, b); }, {&a, &b});
                   }});
  cases.push_back({"mul", kSmoothTol, [&gc] {
                     Tensor64 a = leaf({2, 3, 2, 2, 2}, 182);
                     Tensor64 b = leaf({2, 3, 2, 2, 2}, 183);
                     return gc.check([&](Tape64* t) { return mul<double>(t, a, b); }, {&a, &b});
                   }});
  cases.push_back({"add_scalar / scalar_mul", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({30}, 184);
                     return gc.check(
                         [&](Tape64* t) {
                           return add_scalar<double>(t, scalar_mul<double>(t, x, 0.7), 0.3);
                         },
                         {&x});
                   }});
  cases.push_back({"mul_channelwise", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 3, 2, 2, 2}, 185);
                     Tensor64 g = leaf({2, 3}, 186);
                     return gc.check([&](Tape64* t) { return mul_channelwise<double>(t, x, g); },
                                     {&x, &g});
                   }});
  cases.push_back({"scale_by", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 3, 2, 2, 2}, 187);
                     Tensor64 s = leaf({1}, 188);
                     return gc.check([&](Tape64* t) { return scale_by<double>(t, x, s); },
                                     {&x, &s});
                   }});
  cases.push_back({"broadcast_rows", kSmoothTol, [&gc] {
                     Tensor64 v = leaf({6}, 189);
                     return gc.check([&](Tape64* t) { return broadcast_rows<double>(t, v, 5); },
                                     {&v});
                   }});
  cases.push_back({"sum / mean", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({24}, 190);
                     return gc.check(
                         [&](Tape64* t) {
                           return add<double>(t, sum<double>(t, x), mean<double>(t, x));
                         },
                         {&x});
                   }});
  cases.push_back({"global_avg_pool", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 3, 2, 2, 2}, 191);
                     return gc.check([&](Tape64* t) { return global_avg_pool<double>(t, x); },
                                     {&x});
                   }});
  cases.push_back({"reshape", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({2, 3, 2, 2, 2}, 192);
                     return gc.check(
                         [&](Tape64* t) {
                           auto r = reshape<double>(t, x, {6, 8});
                           return mul<double>(t, r, r);
                         },
                         {&x});
                   }});
  cases.push_back({"concat_channels", kSmoothTol, [&gc] {
                     Tensor64 a = leaf({2, 3, 2, 2, 2}, 193);
                     Tensor64 b = leaf({2, 2, 2, 2, 2}, 194);
                     return gc.check([&](Tape64* t) { return concat_channels<double>(t, a, b); },
                                     {&a, &b});
                   }});
  cases.push_back({"linear + bias", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({5, 4}, 195);
                     Tensor64 w = leaf({3, 4}, 196, 0.5);
                     Tensor64 b = leaf({3}, 197, 0.2);
                     return gc.check([&](Tape64* t) { return linear<double>(t, x, w, &b); },
                                     {&x, &w, &b});
                   }});
  cases.push_back({"gmf_membership", kSmoothTol, [&gc] {
                     Tensor64 x = leaf({1, 3, 3, 3, 3}, 198);
                     Tensor64 mu = leaf({2, 3}, 199, 0.5);
                     Tensor64 sg = leaf({2, 3}, 260, 0.0);
                     for (auto& v : sg.vec()) v += 1.0; // positive widths
                     return gc.check(
                         [&](Tape64* t) { return gmf_membership<double>(t, x, mu, sg); },
                         {&x, &mu, &sg});
                   }});
  cases.push_back({"fuzzy_or (kinked)", kKinkedTol, [&gc] {
                     Tensor64 m = prob_leaf({1, 3, 2, 2, 2, 2}, 261);
                     return gc.check([&](Tape64* t) { return fuzzy_or<double>(t, m); }, {&m});
                   }});
  cases.push_back({"se_layer (kinked)", kKinkedTol, [&gc] {
                     Rng rng(262);
                     Tensor64 x = leaf({1, 4, 3, 3, 3}, 263);
                     SeParamsT<double> p = SeParamsT<double>::init(4, 2, rng);
                     return gc.check([&](Tape64* t) { return se_layer<double>(t, x, p); },
                                     {&x, &p.reduce, &p.expand});
                   }});
  for (GateTarget gt : {GateTarget::encoder, GateTarget::sum}) {
    const char* name = gt == GateTarget::encoder ? "fuzzy_attention gate=encoder (kinked)"
                                                 : "fuzzy_attention gate=sum (kinked)";
    cases.push_back({name, kKinkedTol, [&gc, gt] {
                       Rng rng(264);
                       Tensor64 enc = leaf({1, 4, 4, 4, 4}, 265);
                       Tensor64 dec = leaf({1, 4, 4, 4, 4}, 266);
                       FuzzyAttentionParamsT<double> p = FuzzyAttentionParamsT<double>::init(4, 2, 2, rng);
                       p.gate_target = gt;
                       std::vector<Tensor64*> leaves{&enc, &dec};
                       for (Tensor64* t : p.params()) leaves.push_back(t);
                       return gc.check(
                           [&](Tape64* t) {
                             auto out = fuzzy_attention_module<double>(t, enc, dec, p);
                             return add<double>(t, out.attended, out.alpha);
                           },
                           leaves);
                     }});
  }
  cases.push_back({"dice_loss", kSmoothTol, [&gc] {
                     Tensor64 p = prob_leaf({40}, 267);
                     Tensor64 y = binary_target({40}, 268);
                     return gc.check([&](Tape64* t) { return dice_loss<double>(t, p, y); }, {&p});
                   }});
  cases.push_back({"bce_loss", kSmoothTol, [&gc] {
                     Tensor64 p = prob_leaf({40}, 269);
                     Tensor64 y = binary_target({40}, 270);
                     return gc.check([&](Tape64* t) { return bce_loss<double>(t, p, y); }, {&p});
                   }});

  std::vector<GradSuiteEntry> out;
  out.reserve(cases.size());
  for (const Case& c : cases) out.push_back(run_case(c));
  return out;
}

std::string gradient_suite_table(const std::vector<GradSuiteEntry>& entries) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-40s %12s %9s %8s %8s  %s\n", "op", "max_rel_err", "tol",
                "checked", "skipped", "status");
  out += line;
  for (const GradSuiteEntry& e : entries) {
    std::snprintf(line, sizeof line, "%-40s %12.3e %9.0e %8lld %8lld  %s\n", e.name.c_str(),
                  e.max_rel_err, e.tol, static_cast<long long>(e.checked),
                  static_cast<long long>(e.skipped), e.pass ? "pass" : "FAIL");
    out += line;
  }
  std::size_t failed = 0;
  for (const GradSuiteEntry& e : entries)
    if (!e.pass) ++failed;
  std::snprintf(line, sizeof line, "%zu/%zu passed\n", entries.size() - failed, entries.size());
  out += line;
  return out;
}

bool gradient_suite_ok(const std::vector<GradSuiteEntry>& entries) {
  for (const GradSuiteEntry& e : entries)
    if (!e.pass) return false;
  return !entries.empty();
}

} // namespace fabr
