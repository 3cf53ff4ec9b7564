#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace fabr {

using Coord = std::array<int, 3>;

// Plain voxel containers for data that lives outside the autodiff graph:
// ground-truth masks, generated intensity volumes, prediction binarizations.
struct MaskU8 {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> v;

  MaskU8() = default;
  MaskU8(int h, int w, int d) : dims{h, w, d}, v(static_cast<size_t>(h) * w * d, 0) {}

  std::int64_t numel() const { return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2]; }
  std::uint8_t& at(int h, int w, int d) {
    return v[(static_cast<size_t>(h) * dims[1] + w) * dims[2] + d];
  }
  std::uint8_t at(int h, int w, int d) const {
    return v[(static_cast<size_t>(h) * dims[1] + w) * dims[2] + d];
  }
  bool in_bounds(const Coord& c) const {
    return c[0] >= 0 && c[0] < dims[0] && c[1] >= 0 && c[1] < dims[1] && c[2] >= 0 && c[2] < dims[2];
  }
};

struct VolumeF {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<float> v;

  VolumeF() = default;
  VolumeF(int h, int w, int d) : dims{h, w, d}, v(static_cast<size_t>(h) * w * d, 0.0f) {}

  std::int64_t numel() const { return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2]; }
  float& at(int h, int w, int d) {
    return v[(static_cast<size_t>(h) * dims[1] + w) * dims[2] + d];
  }
  float at(int h, int w, int d) const {
    return v[(static_cast<size_t>(h) * dims[1] + w) * dims[2] + d];
  }
};

// 2x max pooling; requires all dims even.
MaskU8 maxpool2(const MaskU8& m);

// nearest-neighbor 2x upsampling.
MaskU8 upsample_nearest2(const MaskU8& m);

// 3x3x3 mean filter; windows are truncated at the borders.
VolumeF box_blur3(const VolumeF& x);

MaskU8 binarize(const VolumeF& x, float tau);

void flip_axis(MaskU8& m, int axis);
void flip_axis(VolumeF& x, int axis);

// Per-scale ground truth: pyramid[0] is the input, pyramid[l] is maxpool2
// applied l times. Requires dims divisible by 2^(levels-1).
std::vector<MaskU8> mask_pyramid(const MaskU8& m, int levels);

} // namespace fabr
