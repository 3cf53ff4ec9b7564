#include "fabr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fabr/rng.hpp"

namespace fabr {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 addv(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dotv(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dotv(a, a)); }
Vec3 normalize(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double point_segment_dist(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = sub(b, a);
  const double len2 = dotv(ab, ab);
  double t = len2 > 0.0 ? dotv(sub(p, a), ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(sub(p, addv(a, scale(ab, t))));
}

// Rotate u away from itself by angle alpha at azimuth psi.
Vec3 rotate_off_axis(const Vec3& u, double alpha, double psi) {
  Vec3 ref = std::abs(u[0]) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  const Vec3 e1 = normalize(cross(u, ref));
  const Vec3 e2 = cross(u, e1);
  const Vec3 perp = addv(scale(e1, std::cos(psi)), scale(e2, std::sin(psi)));
  return normalize(addv(scale(u, std::cos(alpha)), scale(perp, std::sin(alpha))));
}

bool capsule_fits(const Vec3& c0, const Vec3& c1, double r, const std::array<int, 3>& dims) {
  for (int a = 0; a < 3; ++a) {
    if (std::min(c0[a], c1[a]) - r < 0.0) return false;
    if (std::max(c0[a], c1[a]) + r > static_cast<double>(dims[a] - 1)) return false;
  }
  return true;
}

void rasterize_capsule(MaskU8& mask, const Vec3& c0, const Vec3& c1, double r) {
  std::array<int, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor(std::min(c0[a], c1[a]) - r - 1.0)));
    hi[a] = std::min(mask.dims[a] - 1, static_cast<int>(std::ceil(std::max(c0[a], c1[a]) + r + 1.0)));
  }
  for (int h = lo[0]; h <= hi[0]; ++h)
    for (int w = lo[1]; w <= hi[1]; ++w)
      for (int d = lo[2]; d <= hi[2]; ++d) {
        const Vec3 p{static_cast<double>(h), static_cast<double>(w), static_cast<double>(d)};
        if (point_segment_dist(p, c0, c1) <= r) mask.at(h, w, d) = 1;
      }
}

std::vector<Coord> rasterize_centerline(const Vec3& c0, const Vec3& c1) {
  const double seg = norm(sub(c1, c0));
  const Vec3 u = seg > 0.0 ? normalize(sub(c1, c0)) : Vec3{1.0, 0.0, 0.0};
  std::vector<Coord> line;
  for (double t = 0.0;; t += 0.5) {
    const double tc = std::min(t, seg);
    const Vec3 p = addv(c0, scale(u, tc));
    const Coord c{static_cast<int>(std::lround(p[0])), static_cast<int>(std::lround(p[1])),
                  static_cast<int>(std::lround(p[2]))};
    if (line.empty() || line.back() != c) line.push_back(c);
    if (tc >= seg) break;
  }
  return line;
}

struct Pending {
  int parent_id;
  int generation;
  double radius;
  Vec3 anchor;
  Vec3 dir;
};

} // namespace

void PhantomConfig::validate() const {
  for (int a = 0; a < 3; ++a)
    if (grid[a] < 8) throw std::runtime_error("phantom: grid dim must be at least 8");
  if (trunk_radius < 0.5f) throw std::runtime_error("phantom: trunk radius below half a voxel");
  if (depth < 0) throw std::runtime_error("phantom: negative depth");
  if (radius_decay <= 0.0f || radius_decay >= 1.0f)
    throw std::runtime_error("phantom: radius decay must be in (0,1)");
  const double tip = trunk_radius * std::pow(static_cast<double>(radius_decay), depth);
  if (tip < 0.5)
    throw std::runtime_error("phantom: radius decays below half a voxel at depth " +
                             std::to_string(depth));
  if (seg_len_lo <= 0.0f || seg_len_hi < seg_len_lo)
    throw std::runtime_error("phantom: bad segment length range");
  if (branch_angle_lo < 0.0f || branch_angle_hi < branch_angle_lo || branch_angle_hi > 80.0f)
    throw std::runtime_error("phantom: bad branch angle range");
}

PhantomSample generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double deg = M_PI / 180.0;

  PhantomSample out;
  out.tree.dims = cfg.grid;
  out.mask = MaskU8(cfg.grid[0], cfg.grid[1], cfg.grid[2]);

  const Vec3 center{cfg.grid[0] * 0.5, cfg.grid[1] * 0.5, cfg.grid[2] * 0.5};

  // Root anchor near the low-h face; draw order is part of the format.
  const double jw = rng.uniform(-0.1, 0.1) * cfg.grid[1];
  const double jd = rng.uniform(-0.1, 0.1) * cfg.grid[2];
  const double tilt = rng.uniform(0.0, 12.0) * deg;
  const double azim = rng.uniform(0.0, 2.0 * M_PI);
  Pending root;
  root.parent_id = -1;
  root.generation = 0;
  root.radius = cfg.trunk_radius;
  root.anchor = {cfg.trunk_radius + 0.5, center[1] + jw, center[2] + jd};
  root.dir = {std::cos(tilt), std::sin(tilt) * std::cos(azim), std::sin(tilt) * std::sin(azim)};

  std::vector<Pending> queue{root};
  for (size_t qi = 0; qi < queue.size(); ++qi) {
    Pending cur = queue[qi];
    double L = rng.uniform(cfg.seg_len_lo, cfg.seg_len_hi);
    double seg = L - 2.0 * cur.radius;
    if (seg < 2.0) seg = 2.0;

    // Deterministically steer toward the grid center until the capsule fits.
    const Vec3 to_center = normalize(sub(center, cur.anchor));
    Vec3 dir = cur.dir;
    double seg_use = seg;
    bool placed = false;
    for (int attempt = 0; attempt < 25; ++attempt) {
      const double t = std::min(1.0, attempt * 0.1);
      const Vec3 cand = normalize(addv(scale(cur.dir, 1.0 - t), scale(to_center, t)));
      const double shrink = attempt >= 16 ? std::max(0.3, 1.0 - 0.1 * (attempt - 15)) : 1.0;
      const double s = std::max(2.0, seg * shrink);
      const Vec3 c1 = addv(cur.anchor, scale(cand, s));
      if (capsule_fits(cur.anchor, c1, cur.radius, cfg.grid)) {
        dir = cand;
        seg_use = s;
        placed = true;
        break;
      }
    }
    if (!placed)
      throw std::runtime_error("phantom: branch at generation " + std::to_string(cur.generation) +
                               " does not fit inside the grid");

    Branch b;
    b.id = static_cast<int>(out.tree.branches.size());
    b.parent_id = cur.parent_id;
    b.generation = cur.generation;
    b.radius = static_cast<float>(cur.radius);
    const Vec3 c1 = addv(cur.anchor, scale(dir, seg_use));
    b.c0 = {static_cast<float>(cur.anchor[0]), static_cast<float>(cur.anchor[1]),
            static_cast<float>(cur.anchor[2])};
    b.c1 = {static_cast<float>(c1[0]), static_cast<float>(c1[1]), static_cast<float>(c1[2])};
    b.centerline = rasterize_centerline(cur.anchor, c1);
    rasterize_capsule(out.mask, cur.anchor, c1, cur.radius);
    out.tree.branches.push_back(b);

    if (cur.generation < cfg.depth) {
      const double phi = rng.uniform(0.0, 2.0 * M_PI);
      for (int k = 0; k < 2; ++k) {
        const double alpha = rng.uniform(cfg.branch_angle_lo, cfg.branch_angle_hi) * deg;
        const double psi = phi + k * M_PI + rng.uniform(-0.3, 0.3);
        Pending child;
        child.parent_id = b.id;
        child.generation = cur.generation + 1;
        child.radius = cur.radius * cfg.radius_decay;
        child.anchor = c1;
        child.dir = rotate_off_axis(dir, alpha, psi);
        queue.push_back(child);
      }
    }
  }

  // Intensity: blurred mask plus gaussian noise, drawn after all structure.
  VolumeF soft(cfg.grid[0], cfg.grid[1], cfg.grid[2]);
  for (std::int64_t i = 0; i < soft.numel(); ++i)
    soft.v[static_cast<size_t>(i)] = static_cast<float>(out.mask.v[static_cast<size_t>(i)]);
  out.intensity = box_blur3(soft);
  for (auto& x : out.intensity.v) x += 0.1f * static_cast<float>(rng.gaussian());
  return out;
}

std::vector<std::vector<int>> split_dataset(int n, const std::vector<double>& ratios,
                                            std::uint64_t seed) {
  if (n <= 0) throw std::runtime_error("split: empty dataset");
  if (ratios.empty()) throw std::runtime_error("split: no ratios");
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw std::runtime_error("split: negative ratio");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::runtime_error("split: ratios must sum to 1");

  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }

  // Largest-remainder apportionment, ties to the lower bucket index.
  const size_t k = ratios.size();
  std::vector<int> counts(k, 0);
  std::vector<std::pair<double, size_t>> rem;
  int assigned = 0;
  for (size_t i = 0; i < k; ++i) {
    const double exact = ratios[i] * n;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; i < n - assigned; ++i) counts[rem[static_cast<size_t>(i) % k].second]++;

  std::vector<std::vector<int>> groups(k);
  int at = 0;
  for (size_t i = 0; i < k; ++i) {
    for (int j = 0; j < counts[i]; ++j) groups[i].push_back(idx[static_cast<size_t>(at++)]);
    std::sort(groups[i].begin(), groups[i].end());
    if (ratios[i] > 0.0 && groups[i].empty())
      throw std::runtime_error("split: bucket " + std::to_string(i) +
                               " with positive ratio received no items");
  }
  return groups;
}

std::array<bool, 3> random_flip_augment(VolumeF& vol, MaskU8& mask, std::uint64_t seed) {
  if (vol.dims != mask.dims) throw std::runtime_error("flip: volume and mask dims differ");
  Rng rng(seed);
  std::array<bool, 3> flips{};
  for (int a = 0; a < 3; ++a) flips[static_cast<size_t>(a)] = rng.coin();
  for (int a = 0; a < 3; ++a)
    if (flips[static_cast<size_t>(a)]) {
      flip_axis(vol, a);
      flip_axis(mask, a);
    }
  return flips;
}

} // namespace fabr
