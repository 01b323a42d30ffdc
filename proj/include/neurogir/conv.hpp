#pragma once

// 3D convolution (im2col + GEMM over depth slabs), the per-point unit
// convolution, and the two decoder upsampling operators.

#include <array>
#include <string>
#include <vector>

#include "neurogir/ops.hpp"

namespace neurogir {

using Triple = std::array<std::size_t, 3>;

namespace detail {

inline void require_rank(std::string_view op, const Shape& shape, std::size_t rank, std::string_view what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": " + std::string(what) + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(shape));
  }
}

struct ConvGeometry {
  std::size_t batch, cin, cout;
  Triple in, kernel, out, stride, pad;

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::size_t patch() const { return cin * kernel[0] * kernel[1] * kernel[2]; }
  bool pointwise() const {
    return kernel == Triple{1, 1, 1} && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

// Rows: (ci, kz, ky, kx); columns: output voxels of depth slices [z0, z1).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t z0, std::size_t z1, T* col) {
  const std::size_t ncols = (z1 - z0) * g.out[1] * g.out[2];
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.in_volume();
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz)
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky)
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++r) {
          T* dst = col + r * ncols;
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const std::ptrdiff_t iz = std::ptrdiff_t(oz * g.stride[0] + kz) - std::ptrdiff_t(g.pad[0]);
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride[1] + ky) - std::ptrdiff_t(g.pad[1]);
              const bool row_ok = iz >= 0 && iz < std::ptrdiff_t(g.in[0]) && iy >= 0 && iy < std::ptrdiff_t(g.in[1]);
              const T* src = row_ok ? xc + (std::size_t(iz) * g.in[1] + std::size_t(iy)) * g.in[2] : nullptr;
              for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride[2] + kx) - std::ptrdiff_t(g.pad[2]);
                *dst++ = (row_ok && ix >= 0 && ix < std::ptrdiff_t(g.in[2])) ? src[ix] : T(0);
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::size_t z0, std::size_t z1, T* dx) {
  const std::size_t ncols = (z1 - z0) * g.out[1] * g.out[2];
  std::size_t r = 0;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* xc = dx + ci * g.in_volume();
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz)
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky)
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++r) {
          const T* src = col + r * ncols;
          for (std::size_t oz = z0; oz < z1; ++oz) {
            const std::ptrdiff_t iz = std::ptrdiff_t(oz * g.stride[0] + kz) - std::ptrdiff_t(g.pad[0]);
            for (std::size_t oy = 0; oy < g.out[1]; ++oy) {
              const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride[1] + ky) - std::ptrdiff_t(g.pad[1]);
              const bool row_ok = iz >= 0 && iz < std::ptrdiff_t(g.in[0]) && iy >= 0 && iy < std::ptrdiff_t(g.in[1]);
              T* dst = row_ok ? xc + (std::size_t(iz) * g.in[1] + std::size_t(iy)) * g.in[2] : nullptr;
              for (std::size_t ox = 0; ox < g.out[2]; ++ox, ++src) {
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride[2] + kx) - std::ptrdiff_t(g.pad[2]);
                if (row_ok && ix >= 0 && ix < std::ptrdiff_t(g.in[2])) dst[ix] += *src;
              }
            }
          }
        }
  }
}

// Depth slices per GEMM so each column block holds roughly 4k voxels.
inline std::size_t slab_depth(const ConvGeometry& g) {
  const std::size_t plane = g.out[1] * g.out[2];
  return std::max<std::size_t>(1, std::min(g.out[0], 4096 / std::max<std::size_t>(plane, 1)));
}

}  // namespace detail

/// x: (B, Cin, D, H, W), w: (Cout, Cin, kd, kh, kw), b: (Cout) or undefined.
/// Zero padding; output extent per axis is (n + 2p - k) / stride + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Triple stride = {1, 1, 1},
                 Triple padding = {0, 0, 0}) {
  detail::require_rank("conv3d", x.shape(), 5, "input");
  detail::require_rank("conv3d", w.shape(), 5, "weight");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv3d: channel axis mismatch, input has " + std::to_string(x.dim(1)) +
                     " channels but weight expects " + std::to_string(w.dim(1)));
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != w.dim(0))) {
    throw ShapeError("conv3d: bias shape " + shape_str(b.shape()) + " does not match " +
                     std::to_string(w.dim(0)) + " output channels");
  }
  detail::ConvGeometry g{x.dim(0), x.dim(1), w.dim(0), {x.dim(2), x.dim(3), x.dim(4)},
                         {w.dim(2), w.dim(3), w.dim(4)}, {}, stride, padding};
  static constexpr const char* axis_names[] = {"depth", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    if (stride[a] == 0) throw ShapeError(std::string("conv3d: zero stride on ") + axis_names[a] + " axis");
    if (g.in[a] + 2 * padding[a] < g.kernel[a]) {
      throw ShapeError(std::string("conv3d: kernel does not fit the padded input on the ") + axis_names[a] +
                       " axis (" + std::to_string(g.in[a]) + " + 2*" + std::to_string(padding[a]) + " < " +
                       std::to_string(g.kernel[a]) + ")");
    }
    g.out[a] = (g.in[a] + 2 * padding[a] - g.kernel[a]) / stride[a] + 1;
  }

  const std::size_t out_vol = g.out_volume(), in_vol = g.in_volume(), K = g.patch();
  std::vector<T> y(g.batch * g.cout * out_vol, T(0));
  const auto wm = as_matrix(w.values().data(), g.cout, K);
  const std::size_t slab = detail::slab_depth(g);
  std::vector<T> col;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xn = x.values().data() + n * g.cin * in_vol;
    T* yn = y.data() + n * g.cout * out_vol;
    if (g.pointwise()) {
      as_matrix(yn, g.cout, out_vol).noalias() = wm * as_matrix(xn, g.cin, in_vol);
    } else {
      for (std::size_t z0 = 0; z0 < g.out[0]; z0 += slab) {
        const std::size_t z1 = std::min(g.out[0], z0 + slab);
        const std::size_t ncols = (z1 - z0) * g.out[1] * g.out[2];
        col.resize(K * ncols);
        detail::im2col(g, xn, z0, z1, col.data());
        as_matrix(yn + z0 * g.out[1] * g.out[2], g.cout, ncols, out_vol).noalias() =
            wm * as_matrix(col.data(), K, ncols);
      }
    }
    if (has_bias) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        T* yc = yn + c * out_vol;
        const T bias = b.values()[c];
        for (std::size_t i = 0; i < out_vol; ++i) yc[i] += bias;
      }
    }
  }

  Shape out_shape{g.batch, g.cout, g.out[0], g.out[1], g.out[2]};
  return make_result<T>("conv3d", std::move(out_shape), std::move(y), {x, w, b}, [g](Node<T>& self) {
    const std::size_t out_vol = g.out_volume(), in_vol = g.in_volume(), K = g.patch();
    const T* xdata = self.inputs[0]->data.data();
    const T* wdata = self.inputs[1]->data.data();
    auto* gx = input_grad(self, 0);
    auto* gw = input_grad(self, 1);
    auto* gb = self.inputs[2] ? input_grad(self, 2) : nullptr;
    const auto wm = as_matrix(wdata, g.cout, K);
    const std::size_t slab = detail::slab_depth(g);
    std::vector<T> col, dcol;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* xn = xdata + n * g.cin * in_vol;
      const T* dyn = self.grad.data() + n * g.cout * out_vol;
      if (gb) {
        for (std::size_t c = 0; c < g.cout; ++c) {
          T acc = T(0);
          for (std::size_t i = 0; i < out_vol; ++i) acc += dyn[c * out_vol + i];
          (*gb)[c] += acc;
        }
      }
      if (g.pointwise()) {
        const auto dy = as_matrix(dyn, g.cout, out_vol);
        if (gw) as_matrix(gw->data(), g.cout, K).noalias() += dy * as_matrix(xn, g.cin, in_vol).transpose();
        if (gx) as_matrix(gx->data() + n * g.cin * in_vol, g.cin, in_vol).noalias() += wm.transpose() * dy;
        continue;
      }
      for (std::size_t z0 = 0; z0 < g.out[0]; z0 += slab) {
        const std::size_t z1 = std::min(g.out[0], z0 + slab);
        const std::size_t ncols = (z1 - z0) * g.out[1] * g.out[2];
        const auto dy = as_matrix(dyn + z0 * g.out[1] * g.out[2], g.cout, ncols, out_vol);
        if (gw) {
          col.resize(K * ncols);
          detail::im2col(g, xn, z0, z1, col.data());
          as_matrix(gw->data(), g.cout, K).noalias() += dy * as_matrix(col.data(), K, ncols).transpose();
        }
        if (gx) {
          dcol.resize(K * ncols);
          as_matrix(dcol.data(), K, ncols).noalias() = wm.transpose() * dy;
          detail::col2im_add(g, dcol.data(), z0, z1, gx->data() + n * g.cin * in_vol);
        }
      }
    }
  });
}

/// Per-point affine map on the flattened (S, Cin) view: x w^T + b.
template <typename T>
Tensor<T> unit_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("unit_conv", x.shape(), 2, "input");
  detail::require_rank("unit_conv", w.shape(), 2, "weight");
  const std::size_t s = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  if (w.dim(1) != cin) {
    throw ShapeError("unit_conv: channel mismatch, input has " + std::to_string(cin) + " channels but weight expects " +
                     std::to_string(w.dim(1)));
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != cout)) {
    throw ShapeError("unit_conv: bias shape " + shape_str(b.shape()) + " does not match " + std::to_string(cout) +
                     " output channels");
  }
  std::vector<T> y(s * cout);
  auto ym = as_matrix(y.data(), s, cout);
  ym.noalias() = as_matrix(x.values().data(), s, cin) * as_matrix(w.values().data(), cout, cin).transpose();
  if (has_bias) {
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t c = 0; c < cout; ++c) y[i * cout + c] += b.values()[c];
  }
  return make_result<T>("unit_conv", {s, cout}, std::move(y), {x, w, b}, [s, cin, cout](Node<T>& self) {
    const auto dy = as_matrix(self.grad.data(), s, cout);
    if (auto* gx = input_grad(self, 0)) {
      as_matrix(gx->data(), s, cin).noalias() += dy * as_matrix(self.inputs[1]->data.data(), cout, cin);
    }
    if (auto* gw = input_grad(self, 1)) {
      as_matrix(gw->data(), cout, cin).noalias() += dy.transpose() * as_matrix(self.inputs[0]->data.data(), s, cin);
    }
    if (self.inputs[2]) {
      if (auto* gb = input_grad(self, 2)) {
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t c = 0; c < cout; ++c) (*gb)[c] += self.grad[i * cout + c];
      }
    }
  });
}

/// Transposed convolution with a 2x2x2 kernel and stride 2.
/// x: (B, Cin, D, H, W), w: (Cin, Cout, 2, 2, 2), b: (Cout) or undefined.
template <typename T>
Tensor<T> conv_transpose2x(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("conv_transpose2x", x.shape(), 5, "input");
  detail::require_rank("conv_transpose2x", w.shape(), 5, "weight");
  if (w.dim(0) != x.dim(1) || w.dim(2) != 2 || w.dim(3) != 2 || w.dim(4) != 2) {
    throw ShapeError("conv_transpose2x: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  const Triple in{x.dim(2), x.dim(3), x.dim(4)};
  const std::size_t s = in[0] * in[1] * in[2];
  const Triple out{2 * in[0], 2 * in[1], 2 * in[2]};
  const std::size_t out_vol = 8 * s;
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != cout)) throw ShapeError("conv_transpose2x: bias shape mismatch");

  std::vector<T> y(batch * cout * out_vol);
  std::vector<T> tmp(cout * 8 * s);
  const auto wm = as_matrix(w.values().data(), cin, cout * 8);
  for (std::size_t n = 0; n < batch; ++n) {
    as_matrix(tmp.data(), cout * 8, s).noalias() = wm.transpose() * as_matrix(x.values().data() + n * cin * s, cin, s);
    T* yn = y.data() + n * cout * out_vol;
    for (std::size_t c = 0; c < cout; ++c) {
      const T bias = has_bias ? b.values()[c] : T(0);
      for (std::size_t k = 0; k < 8; ++k) {
        const std::size_t a = k >> 2, bb = (k >> 1) & 1, cc = k & 1;
        const T* src = tmp.data() + (c * 8 + k) * s;
        for (std::size_t z = 0; z < in[0]; ++z)
          for (std::size_t yy = 0; yy < in[1]; ++yy)
            for (std::size_t xx = 0; xx < in[2]; ++xx) {
              yn[c * out_vol + ((2 * z + a) * out[1] + 2 * yy + bb) * out[2] + 2 * xx + cc] = *src++ + bias;
            }
      }
    }
  }
  Shape shape{batch, cout, out[0], out[1], out[2]};
  return make_result<T>("conv_transpose2x", std::move(shape), std::move(y), {x, w, b},
                        [batch, cin, cout, in, out, s, out_vol](Node<T>& self) {
                          auto* gx = input_grad(self, 0);
                          auto* gw = input_grad(self, 1);
                          auto* gb = self.inputs[2] ? input_grad(self, 2) : nullptr;
                          std::vector<T> dtmp(cout * 8 * s);
                          const auto wm = as_matrix(self.inputs[1]->data.data(), cin, cout * 8);
                          for (std::size_t n = 0; n < batch; ++n) {
                            const T* dyn = self.grad.data() + n * cout * out_vol;
                            for (std::size_t c = 0; c < cout; ++c) {
                              for (std::size_t k = 0; k < 8; ++k) {
                                const std::size_t a = k >> 2, bb = (k >> 1) & 1, cc = k & 1;
                                T* dst = dtmp.data() + (c * 8 + k) * s;
                                for (std::size_t z = 0; z < in[0]; ++z)
                                  for (std::size_t yy = 0; yy < in[1]; ++yy)
                                    for (std::size_t xx = 0; xx < in[2]; ++xx) {
                                      *dst++ = dyn[c * out_vol + ((2 * z + a) * out[1] + 2 * yy + bb) * out[2] +
                                                   2 * xx + cc];
                                    }
                              }
                              if (gb) {
                                T acc = T(0);
                                for (std::size_t i = 0; i < out_vol; ++i) acc += dyn[c * out_vol + i];
                                (*gb)[c] += acc;
                              }
                            }
                            const auto dt = as_matrix(dtmp.data(), cout * 8, s);
                            const T* xn = self.inputs[0]->data.data() + n * cin * s;
                            if (gw) as_matrix(gw->data(), cin, cout * 8).noalias() += as_matrix(xn, cin, s) * dt.transpose();
                            if (gx) as_matrix(gx->data() + n * cin * s, cin, s).noalias() += wm * dt;
                          }
                        });
}

/// Nearest-neighbour 2x upsampling of the three spatial axes.
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  detail::require_rank("upsample_nearest2x", x.shape(), 5, "input");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const Triple in{x.dim(2), x.dim(3), x.dim(4)};
  const Triple out{2 * in[0], 2 * in[1], 2 * in[2]};
  const std::size_t in_vol = in[0] * in[1] * in[2], out_vol = 8 * in_vol;
  std::vector<T> y(planes * out_vol);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t z = 0; z < out[0]; ++z)
      for (std::size_t yy = 0; yy < out[1]; ++yy)
        for (std::size_t xx = 0; xx < out[2]; ++xx) {
          y[p * out_vol + (z * out[1] + yy) * out[2] + xx] =
              x.values()[p * in_vol + ((z / 2) * in[1] + yy / 2) * in[2] + xx / 2];
        }
  Shape shape{x.dim(0), x.dim(1), out[0], out[1], out[2]};
  return make_result<T>("upsample_nearest2x", std::move(shape), std::move(y), {x},
                        [planes, in, out, in_vol, out_vol](Node<T>& self) {
                          auto* gx = input_grad(self, 0);
                          if (!gx) return;
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t z = 0; z < out[0]; ++z)
                              for (std::size_t yy = 0; yy < out[1]; ++yy)
                                for (std::size_t xx = 0; xx < out[2]; ++xx) {
                                  (*gx)[p * in_vol + ((z / 2) * in[1] + yy / 2) * in[2] + xx / 2] +=
                                      self.grad[p * out_vol + (z * out[1] + yy) * out[2] + xx];
                                }
                        });
}

enum class UpsampleMode { transposed, nearest };

inline UpsampleMode parse_upsample_mode(std::string_view name) {
  if (name == "transposed") return UpsampleMode::transposed;
  if (name == "nearest") return UpsampleMode::nearest;
  throw std::invalid_argument("unknown upsample mode '" + std::string(name) + "' (expected transposed|nearest)");
}

inline std::string to_string(UpsampleMode mode) { return mode == UpsampleMode::transposed ? "transposed" : "nearest"; }

/// Doubles every spatial extent. The weight/bias are used only in transposed mode.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, UpsampleMode mode, const Tensor<T>& w = {}, const Tensor<T>& b = {}) {
  return mode == UpsampleMode::transposed ? conv_transpose2x(x, w, b) : upsample_nearest2x(x);
}

}  // namespace neurogir
