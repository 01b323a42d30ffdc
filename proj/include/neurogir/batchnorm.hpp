#pragma once

#include <cmath>
#include <vector>

#include "neurogir/tensor.hpp"

namespace neurogir {

enum class Mode { train, infer };

/// Per-channel normalization of a (N, C, ...) tensor over every axis but 1.
///
/// Train mode normalizes with the population statistics of the batch and
/// blends them into the running buffers (unbiased variance, torch-style
/// momentum). Infer mode normalizes with the running buffers. Running buffers
/// are plain tensors updated in place and never enter the graph.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps, Mode mode,
                      Tensor<T>& running_mean, Tensor<T>& running_var, T momentum = T(0.1)) {
  if (x.rank() < 2) throw ShapeError("batchnorm3d: input needs a channel axis, got " + shape_str(x.shape()));
  const std::size_t outer = x.dim(0), channels = x.dim(1);
  std::size_t inner = 1;
  for (std::size_t d = 2; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t group = outer * inner;
  if (group == 0 || channels == 0) throw ShapeError("batchnorm3d: zero-size normalization group");
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->size() != channels) {
      throw ShapeError("batchnorm3d: per-channel tensor of shape " + shape_str(t->shape()) + " for " +
                       std::to_string(channels) + " channels");
    }
  }

  const auto& xv = x.values();
  std::vector<T> mu(channels), inv_std(channels);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = xv.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += double(p[i]);
      }
      const double m = s / double(group);
      double ss = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = xv.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = double(p[i]) - m;
          ss += d * d;
        }
      }
      const double var = ss / double(group);
      mu[c] = T(m);
      inv_std[c] = T(1.0 / std::sqrt(var + double(eps)));
      const double unbiased = group > 1 ? ss / double(group - 1) : var;
      running_mean.values()[c] = T((1.0 - double(momentum)) * double(running_mean.values()[c]) + double(momentum) * m);
      running_var.values()[c] =
          T((1.0 - double(momentum)) * double(running_var.values()[c]) + double(momentum) * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = running_mean.values()[c];
      inv_std[c] = T(1.0 / std::sqrt(double(running_var.values()[c]) + double(eps)));
    }
  }

  std::vector<T> xhat(x.size()), y(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      const T g = gamma.values()[c], b = beta.values()[c];
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[base + i] = (xv[base + i] - mu[c]) * inv_std[c];
        y[base + i] = g * xhat[base + i] + b;
      }
    }
  detail::check_finite("batchnorm3d", xhat);

  const bool train = mode == Mode::train;
  return make_result<T>(
      "batchnorm3d", x.shape(), std::move(y), {x, gamma, beta},
      [outer, channels, inner, group, train, inv_std, xhat = std::move(xhat)](Node<T>& self) {
        const auto& g = self.inputs[1]->data;
        auto* gx = input_grad(self, 0);
        auto* ggamma = input_grad(self, 1);
        auto* gbeta = input_grad(self, 2);
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy += double(self.grad[base + i]);
              sum_dy_xhat += double(self.grad[base + i]) * double(xhat[base + i]);
            }
          }
          if (ggamma) (*ggamma)[c] += T(sum_dy_xhat);
          if (gbeta) (*gbeta)[c] += T(sum_dy);
          if (!gx) continue;
          const double scale = double(g[c]) * double(inv_std[c]);
          const double mean_dy = sum_dy / double(group), mean_dy_xhat = sum_dy_xhat / double(group);
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const double dy = double(self.grad[base + i]);
              (*gx)[base + i] += train ? T(scale * (dy - mean_dy - double(xhat[base + i]) * mean_dy_xhat))
                                       : T(scale * dy);
            }
          }
        }
      });
}

}  // namespace neurogir
