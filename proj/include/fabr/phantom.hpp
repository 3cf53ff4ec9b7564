#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fabr/volume.hpp"

namespace fabr {

// Synthetic branching tube phantom: a binary tree of straight capsules
// (segment plus hemispherical caps). Branch length is the tip-to-tip extent,
// so the centerline segment spans length - 2*radius between the cap centers.
struct PhantomConfig {
  std::uint64_t seed = 0;
  std::array<int, 3> grid{32, 32, 32};
  float trunk_radius = 2.5f;
  int depth = 2;                  // generations of splits below the trunk
  float branch_angle_lo = 20.0f;  // degrees off the parent direction
  float branch_angle_hi = 50.0f;
  float radius_decay = 0.75f;
  float seg_len_lo = 12.0f;
  float seg_len_hi = 18.0f;

  void validate() const; // throws on rejected configs
};

struct Branch {
  int id = 0;
  int parent_id = -1;
  int generation = 0;
  float radius = 0.0f;
  std::array<float, 3> c0{};                // proximal cap center
  std::array<float, 3> c1{};                // distal cap center
  std::vector<Coord> centerline;            // ordered, 26-connected chain
};

struct PhantomTree {
  std::array<int, 3> dims{};
  std::vector<Branch> branches;
};

struct PhantomSample {
  PhantomTree tree;
  MaskU8 mask;
  VolumeF intensity; // blurred mask + gaussian noise, sigma 0.1
};

// Deterministic in config.seed, byte-identical across runs. Throws when the
// config is rejected: radius decays below half a voxel, a branch cannot be
// steered to fit inside the grid, or the segment is too short for its caps.
PhantomSample generate_phantom(const PhantomConfig& cfg);

// Deterministic shuffle-and-partition of n items. Ratios must be nonnegative
// and sum to 1; counts use largest remainder. Throws if n is 0 or a bucket
// with positive ratio ends up empty.
std::vector<std::vector<int>> split_dataset(int n, const std::vector<double>& ratios,
                                            std::uint64_t seed);

// Flips volume and mask together along a random subset of axes; applying the
// same seed twice restores the input. Returns the flip pattern.
std::array<bool, 3> random_flip_augment(VolumeF& vol, MaskU8& mask, std::uint64_t seed);

} // namespace fabr
