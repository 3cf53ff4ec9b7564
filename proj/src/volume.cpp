#include "fabr/volume.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace fabr {

MaskU8 maxpool2(const MaskU8& m) {
  for (int a = 0; a < 3; ++a)
    if (m.dims[a] % 2 != 0)
      throw std::runtime_error("maxpool2: dims must be even, got " + std::to_string(m.dims[a]));
  MaskU8 out(m.dims[0] / 2, m.dims[1] / 2, m.dims[2] / 2);
  for (int h = 0; h < out.dims[0]; ++h)
    for (int w = 0; w < out.dims[1]; ++w)
      for (int d = 0; d < out.dims[2]; ++d) {
        std::uint8_t best = 0;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw)
            for (int dd = 0; dd < 2; ++dd)
              best = std::max(best, m.at(2 * h + dh, 2 * w + dw, 2 * d + dd));
        out.at(h, w, d) = best;
      }
  return out;
}

MaskU8 upsample_nearest2(const MaskU8& m) {
  MaskU8 out(m.dims[0] * 2, m.dims[1] * 2, m.dims[2] * 2);
  for (int h = 0; h < out.dims[0]; ++h)
    for (int w = 0; w < out.dims[1]; ++w)
      for (int d = 0; d < out.dims[2]; ++d) out.at(h, w, d) = m.at(h / 2, w / 2, d / 2);
  return out;
}

VolumeF box_blur3(const VolumeF& x) {
  VolumeF out(x.dims[0], x.dims[1], x.dims[2]);
  for (int h = 0; h < x.dims[0]; ++h)
    for (int w = 0; w < x.dims[1]; ++w)
      for (int d = 0; d < x.dims[2]; ++d) {
        float acc = 0.0f;
        int cnt = 0;
        for (int dh = -1; dh <= 1; ++dh) {
          const int hh = h + dh;
          if (hh < 0 || hh >= x.dims[0]) continue;
          for (int dw = -1; dw <= 1; ++dw) {
            const int ww = w + dw;
            if (ww < 0 || ww >= x.dims[1]) continue;
            for (int dd = -1; dd <= 1; ++dd) {
              const int zz = d + dd;
              if (zz < 0 || zz >= x.dims[2]) continue;
              acc += x.at(hh, ww, zz);
              ++cnt;
            }
          }
        }
        out.at(h, w, d) = acc / static_cast<float>(cnt);
      }
  return out;
}

MaskU8 binarize(const VolumeF& x, float tau) {
  MaskU8 out(x.dims[0], x.dims[1], x.dims[2]);
  for (std::int64_t i = 0; i < x.numel(); ++i) out.v[static_cast<size_t>(i)] = x.v[static_cast<size_t>(i)] > tau ? 1 : 0;
  return out;
}

namespace {

template <typename V>
void flip_axis_impl(V& x, int axis) {
  if (axis < 0 || axis > 2) throw std::runtime_error("flip_axis: axis out of range");
  const int H = x.dims[0], W = x.dims[1], D = x.dims[2];
  V out = x;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      for (int d = 0; d < D; ++d) {
        const int sh = axis == 0 ? H - 1 - h : h;
        const int sw = axis == 1 ? W - 1 - w : w;
        const int sd = axis == 2 ? D - 1 - d : d;
        out.at(h, w, d) = x.at(sh, sw, sd);
      }
  x = std::move(out);
}

} // namespace

void flip_axis(MaskU8& m, int axis) { flip_axis_impl(m, axis); }
void flip_axis(VolumeF& x, int axis) { flip_axis_impl(x, axis); }

std::vector<MaskU8> mask_pyramid(const MaskU8& m, int levels) {
  std::vector<MaskU8> pyr;
  pyr.push_back(m);
  for (int l = 1; l < levels; ++l) pyr.push_back(maxpool2(pyr.back()));
  return pyr;
}

} // namespace fabr
