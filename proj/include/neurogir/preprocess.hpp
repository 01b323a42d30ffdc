#pragma once

// Gaussian prefiltering and rigid augmentation of samples.

#include <cmath>
#include <random>
#include <vector>

#include "neurogir/volume.hpp"

namespace neurogir {

/// Symmetric reflection with the edge sample repeated (... b a | a b c ...).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const std::ptrdiff_t period = 2 * std::ptrdiff_t(n);
  std::ptrdiff_t r = i % period;
  if (r < 0) r += period;
  return r < std::ptrdiff_t(n) ? std::size_t(r) : std::size_t(period - 1 - r);
}

/// Normalized 1D Gaussian taps for offsets -radius..radius, radius = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be positive");
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(std::size_t(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[std::size_t(i + radius)] = std::exp(-double(i * i) / (2 * sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

/// Separable Gaussian smoothing of an image volume; result is f32.
inline Volume gaussian3d(const Volume& v, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const std::ptrdiff_t radius = std::ptrdiff_t(k.size() / 2);
  const Dims d = v.dims;
  std::vector<double> cur(v.size()), next(v.size());
  for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = double(v.value(i));
  const std::size_t stride[3] = {d[1] * d[2], d[2], 1};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = d[axis];
    for (std::size_t z = 0; z < d[0]; ++z)
      for (std::size_t y = 0; y < d[1]; ++y)
        for (std::size_t x = 0; x < d[2]; ++x) {
          const std::size_t pos[3] = {z, y, x};
          const std::size_t base = z * stride[0] + y * stride[1] + x - pos[axis] * stride[axis];
          // Mirrored taps are paired before weighting so a flipped volume
          // filters to the bit-identical flipped result.
          const auto at = [&](std::ptrdiff_t t) {
            return cur[base + reflect_index(std::ptrdiff_t(pos[axis]) + t, n) * stride[axis]];
          };
          double acc = k[std::size_t(radius)] * at(0);
          for (std::ptrdiff_t t = 1; t <= radius; ++t) acc += k[std::size_t(radius + t)] * (at(-t) + at(t));
          next[z * stride[0] + y * stride[1] + x] = acc;
        }
    std::swap(cur, next);
  }
  Volume out = Volume::zeros_f32(d);
  out.meta = v.meta;
  for (std::size_t i = 0; i < cur.size(); ++i) out.f32()[i] = float(cur[i]);
  return out;
}

/// One rigid transform: flips along H and W, a quarter-turn count in the H-W
/// plane, then a crop whose origin is given per axis (D, H, W).
struct AugmentDraw {
  bool flip_h = false;
  bool flip_w = false;
  unsigned quarter_turns = 0;
  Dims crop_origin{0, 0, 0};
};

namespace detail {

// Maps a voxel of the transformed volume back to its source voxel.
template <typename Fn>
Volume remap(const Volume& v, Dims out_dims, Fn source) {
  Volume out = v.dtype() == DType::u8 ? Volume::zeros_u8(out_dims) : Volume::zeros_f32(out_dims);
  out.meta = v.meta;
  for (std::size_t z = 0; z < out_dims[0]; ++z)
    for (std::size_t y = 0; y < out_dims[1]; ++y)
      for (std::size_t x = 0; x < out_dims[2]; ++x) {
        const auto [sz, sy, sx, inside] = source(z, y, x);
        const std::size_t o = (z * out_dims[1] + y) * out_dims[2] + x;
        if (!inside) continue;
        const std::size_t i = v.index(sz, sy, sx);
        if (v.dtype() == DType::u8) out.u8()[o] = v.u8()[i];
        else out.f32()[o] = v.f32()[i];
      }
  return out;
}

}  // namespace detail

inline Volume flip_h(const Volume& v) {
  return detail::remap(v, v.dims, [&](std::size_t z, std::size_t y, std::size_t x) {
    return std::tuple{z, v.dims[1] - 1 - y, x, true};
  });
}

inline Volume flip_w(const Volume& v) {
  return detail::remap(v, v.dims, [&](std::size_t z, std::size_t y, std::size_t x) {
    return std::tuple{z, y, v.dims[2] - 1 - x, true};
  });
}

/// Quarter-turn in the H-W plane; dims become (D, W, H).
inline Volume rotate90(const Volume& v) {
  const Dims out{v.dims[0], v.dims[2], v.dims[1]};
  return detail::remap(v, out, [&](std::size_t z, std::size_t y, std::size_t x) {
    return std::tuple{z, v.dims[1] - 1 - x, y, true};
  });
}

/// Crop of extent `patch` at `origin`; voxels beyond the source are zero.
inline Volume crop(const Volume& v, Dims origin, Dims patch) {
  return detail::remap(v, patch, [&](std::size_t z, std::size_t y, std::size_t x) {
    const std::size_t sz = origin[0] + z, sy = origin[1] + y, sx = origin[2] + x;
    const bool inside = sz < v.dims[0] && sy < v.dims[1] && sx < v.dims[2];
    return std::tuple{inside ? sz : 0, inside ? sy : 0, inside ? sx : 0, inside};
  });
}

inline Volume apply_augment(const Volume& v, const AugmentDraw& draw, Dims patch) {
  Volume out = v;
  if (draw.flip_h) out = flip_h(out);
  if (draw.flip_w) out = flip_w(out);
  for (unsigned i = 0; i < draw.quarter_turns % 4; ++i) out = rotate90(out);
  if (out.dims != patch || draw.crop_origin != Dims{0, 0, 0}) out = crop(out, draw.crop_origin, patch);
  return out;
}

inline Sample apply_augment(const Sample& s, const AugmentDraw& draw, Dims patch) {
  return {apply_augment(s.image, draw, patch), apply_augment(s.label, draw, patch)};
}

/// Random flips, quarter-turn and crop origin for a volume of `dims`.
/// Axes shorter than the patch get origin 0 (the crop zero-pads them).
template <typename Rng>
AugmentDraw draw_augment(Rng& rng, Dims dims, Dims patch) {
  AugmentDraw draw;
  std::bernoulli_distribution coin(0.5);
  draw.flip_h = coin(rng);
  draw.flip_w = coin(rng);
  draw.quarter_turns = unsigned(std::uniform_int_distribution<int>(0, 3)(rng));
  if (draw.quarter_turns % 2 == 1) std::swap(dims[1], dims[2]);
  for (int a = 0; a < 3; ++a) {
    const std::size_t slack = dims[a] > patch[a] ? dims[a] - patch[a] : 0;
    draw.crop_origin[a] = std::uniform_int_distribution<std::size_t>(0, slack)(rng);
  }
  return draw;
}

template <typename Rng>
Sample augment(const Sample& s, Rng& rng, Dims patch = {64, 128, 128}) {
  check_sample(s);
  return apply_augment(s, draw_augment(rng, s.image.dims, patch), patch);
}

}  // namespace neurogir
