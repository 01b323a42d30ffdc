#pragma once

// Elementwise arithmetic, activations, reductions and layout ops.

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "neurogir/tensor.hpp"

namespace neurogir {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename T>
MatrixMap<T> as_matrix(T* data, std::size_t rows, std::size_t cols, std::size_t stride = 0) {
  return MatrixMap<T>(data, Eigen::Index(rows), Eigen::Index(cols),
                      Eigen::OuterStride<>(Eigen::Index(stride ? stride : cols)));
}

template <typename T>
ConstMatrixMap<T> as_matrix(const T* data, std::size_t rows, std::size_t cols, std::size_t stride = 0) {
  return ConstMatrixMap<T>(data, Eigen::Index(rows), Eigen::Index(cols),
                           Eigen::OuterStride<>(Eigen::Index(stride ? stride : cols)));
}

namespace detail {

// Same-shape pairs, or one side with a single element broadcast over the other.
template <typename T>
Shape broadcast_shape(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not compatible");
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(std::string_view op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da, DB db) {
  Shape shape = broadcast_shape(op, a, b);
  const std::size_t n = numel(shape);
  const bool a_scalar = a.size() == 1 && n != 1;
  const bool b_scalar = b.size() == 1 && n != 1;
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  return make_result<T>(op, std::move(shape), std::move(out), {a, b},
                        [a_scalar, b_scalar, da, db](Node<T>& self) {
                          const auto& x = self.inputs[0]->data;
                          const auto& y = self.inputs[1]->data;
                          auto* ga = input_grad(self, 0);
                          auto* gb = input_grad(self, 1);
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            const T xa = x[a_scalar ? 0 : i];
                            const T yb = y[b_scalar ? 0 : i];
                            if (ga) (*ga)[a_scalar ? 0 : i] += self.grad[i] * da(xa, yb);
                            if (gb) (*gb)[b_scalar ? 0 : i] += self.grad[i] * db(xa, yb);
                          }
                        });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(std::string_view op, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  std::vector<T> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [deriv](Node<T>& self) {
    auto* ga = input_grad(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * deriv(x[i], self.data[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary_op<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return detail::unary_op<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

/// s - a
template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& a) {
  return detail::unary_op<T>("rsub_scalar", a, [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

/// max(0, x); the derivative at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "sigmoid", a, [](T x) { return sigmoid_value(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double total = 0.0;
  for (T v : a.values()) total += double(v);
  return make_result<T>("sum", {}, {T(total)}, {a}, [](Node<T>& self) {
    auto* ga = input_grad(self, 0);
    if (!ga) return;
    for (auto& g : *ga) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(a), T(1) / T(a.size()));
}

/// Same values under a new shape with an equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  return make_result<T>("reshape", std::move(shape), a.values(), {a}, [](Node<T>& self) {
    auto* ga = input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.size());
  as_matrix(out.data(), cols, rows) = as_matrix(a.values().data(), rows, cols).transpose();
  return make_result<T>("transpose", {cols, rows}, std::move(out), {a}, [rows, cols](Node<T>& self) {
    auto* ga = input_grad(self, 0);
    if (!ga) return;
    as_matrix(ga->data(), rows, cols) += as_matrix(self.grad.data(), cols, rows).transpose();
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  as_matrix(out.data(), m, n).noalias() = as_matrix(a.values().data(), m, k) * as_matrix(b.values().data(), k, n);
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const auto dy = as_matrix(self.grad.data(), m, n);
    if (auto* ga = input_grad(self, 0)) {
      as_matrix(ga->data(), m, k).noalias() += dy * as_matrix(self.inputs[1]->data.data(), k, n).transpose();
    }
    if (auto* gb = input_grad(self, 1)) {
      as_matrix(gb->data(), k, n).noalias() += as_matrix(self.inputs[0]->data.data(), m, k).transpose() * dy;
    }
  });
}

/// Joins tensors along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis " + std::to_string(axis) + " out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) {
        throw ShapeError("concat: axis " + std::to_string(d) + " differs, " + shape_str(p.shape()) + " vs " +
                         shape_str(first));
      }
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = shape[axis] * inner;
  std::vector<T> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const T* src = parts[i].values().data() + o * widths[i];
      std::copy(src, src + widths[i], out.begin() + std::ptrdiff_t(offset));
      offset += widths[i];
    }
  }
  return make_result<T>("concat", std::move(shape), std::move(out), parts, [outer, row, widths](Node<T>& self) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t offset = o * row;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        if (auto* g = input_grad(self, i)) {
          for (std::size_t j = 0; j < widths[i]; ++j) (*g)[o * widths[i] + j] += self.grad[offset + j];
        }
        offset += widths[i];
      }
    }
  });
}

/// Sub-range [start, start + length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") of axis " +
                     std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t src_row = a.dim(axis) * inner, dst_row = length * inner, skip = start * inner;
  std::vector<T> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = a.values().data() + o * src_row + skip;
    std::copy(src, src + dst_row, out.begin() + std::ptrdiff_t(o * dst_row));
  }
  return make_result<T>("slice", std::move(shape), std::move(out), {a},
                        [outer, src_row, dst_row, skip](Node<T>& self) {
                          auto* ga = input_grad(self, 0);
                          if (!ga) return;
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t j = 0; j < dst_row; ++j) {
                              (*ga)[o * src_row + skip + j] += self.grad[o * dst_row + j];
                            }
                          }
                        });
}

}  // namespace neurogir
