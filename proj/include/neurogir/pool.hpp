#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurogir/conv.hpp"

namespace neurogir {

enum class PoolMode { max, min };

inline PoolMode parse_pool_mode(std::string_view name) {
  if (name == "max") return PoolMode::max;
  if (name == "min") return PoolMode::min;
  throw std::invalid_argument("unsupported pool mode '" + std::string(name) + "' (expected max|min)");
}

/// Cubic-window extremum pooling over (B, C, D, H, W).
///
/// Padded positions never win: they behave as -inf for max and +inf for min.
/// The window is scanned in increasing input linear index with a strict
/// comparison, so among tied extrema the lowest index wins and receives the
/// whole gradient.
template <typename T>
Tensor<T> pool3d(const Tensor<T>& x, PoolMode mode, std::size_t kernel = 3, std::size_t stride = 1,
                 std::size_t padding = 1) {
  detail::require_rank("pool3d", x.shape(), 5, "input");
  if (kernel == 0 || stride == 0) throw ShapeError("pool3d: kernel and stride must be positive");
  if (padding >= kernel) throw ShapeError("pool3d: padding must be smaller than the kernel");
  const Triple in{x.dim(2), x.dim(3), x.dim(4)};
  Triple out{};
  for (int a = 0; a < 3; ++a) {
    if (in[a] + 2 * padding < kernel) throw ShapeError("pool3d: kernel larger than padded input");
    out[a] = (in[a] + 2 * padding - kernel) / stride + 1;
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t in_vol = in[0] * in[1] * in[2], out_vol = out[0] * out[1] * out[2];
  std::vector<T> y(planes * out_vol);
  std::vector<std::uint32_t> source(planes * out_vol);
  const bool is_max = mode == PoolMode::max;

  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x.values().data() + p * in_vol;
    for (std::size_t oz = 0; oz < out[0]; ++oz) {
      const std::ptrdiff_t z0 = std::ptrdiff_t(oz * stride) - std::ptrdiff_t(padding);
      const std::size_t zb = std::size_t(std::max<std::ptrdiff_t>(z0, 0));
      const std::size_t ze = std::size_t(std::min<std::ptrdiff_t>(z0 + std::ptrdiff_t(kernel), std::ptrdiff_t(in[0])));
      for (std::size_t oy = 0; oy < out[1]; ++oy) {
        const std::ptrdiff_t y0 = std::ptrdiff_t(oy * stride) - std::ptrdiff_t(padding);
        const std::size_t yb = std::size_t(std::max<std::ptrdiff_t>(y0, 0));
        const std::size_t ye =
            std::size_t(std::min<std::ptrdiff_t>(y0 + std::ptrdiff_t(kernel), std::ptrdiff_t(in[1])));
        for (std::size_t ox = 0; ox < out[2]; ++ox) {
          const std::ptrdiff_t x0 = std::ptrdiff_t(ox * stride) - std::ptrdiff_t(padding);
          const std::size_t xb = std::size_t(std::max<std::ptrdiff_t>(x0, 0));
          const std::size_t xe =
              std::size_t(std::min<std::ptrdiff_t>(x0 + std::ptrdiff_t(kernel), std::ptrdiff_t(in[2])));
          std::size_t best = (zb * in[1] + yb) * in[2] + xb;
          T value = xp[best];
          for (std::size_t z = zb; z < ze; ++z)
            for (std::size_t yy = yb; yy < ye; ++yy) {
              const std::size_t row = (z * in[1] + yy) * in[2];
              for (std::size_t xx = xb; xx < xe; ++xx) {
                const T v = xp[row + xx];
                if (is_max ? v > value : v < value) {
                  value = v;
                  best = row + xx;
                }
              }
            }
          const std::size_t o = p * out_vol + (oz * out[1] + oy) * out[2] + ox;
          y[o] = value;
          source[o] = std::uint32_t(best);
        }
      }
    }
  }
  Shape shape{x.dim(0), x.dim(1), out[0], out[1], out[2]};
  return make_result<T>(is_max ? "pool3d_max" : "pool3d_min", std::move(shape), std::move(y), {x},
                        [planes, in_vol, out_vol, source = std::move(source)](Node<T>& self) {
                          auto* gx = input_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t o = 0; o < out_vol; ++o) {
                              (*gx)[p * in_vol + source[p * out_vol + o]] += self.grad[p * out_vol + o];
                            }
                        });
}

}  // namespace neurogir
