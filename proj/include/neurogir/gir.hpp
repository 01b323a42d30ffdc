#pragma once

// Global Information Reasoning block.
//
// A feature grid X (S points x C_in channels) is pooled onto N graph nodes by
// N learned spatial attention maps M (N x S), the node states are mixed over a
// fully connected graph with a trainable adjacency A, transformed by W, and
// scattered back onto the grid through the same M. The result is batch
// normalized and added to the input.

#include <random>
#include <string>
#include <vector>

#include "neurogir/batchnorm.hpp"
#include "neurogir/conv.hpp"
#include "neurogir/optim.hpp"

namespace neurogir {

struct GirConfig {
  std::size_t c_in = 0;
  std::size_t n_nodes = 0;    // N
  std::size_t c_gcn = 0;      // node feature width after g(.)
  std::size_t c_gcn_out = 0;  // node feature width after W

  /// N = C_in / 4, C_gcn = C'_gcn = C_in / 2.
  static GirConfig defaults(std::size_t c_in) {
    if (c_in < 4 || c_in % 4 != 0) {
      throw std::invalid_argument("GIR block needs C_in divisible by 4 (got " + std::to_string(c_in) + ")");
    }
    return {c_in, c_in / 4, c_in / 2, c_in / 2};
  }

  void validate() const {
    if (c_in == 0 || n_nodes == 0 || c_gcn == 0 || c_gcn_out == 0) {
      throw std::invalid_argument("GIR config extents must be positive");
    }
  }
};

/// attention (C_in*N + N) + reduce (C_in*C_gcn + C_gcn) + adjacency (N^2)
/// + transform (C_gcn*C'_gcn) + expand (C'_gcn*C_in + C_in) + batch norm (2*C_in).
inline std::size_t gir_param_count(const GirConfig& cfg) {
  const std::size_t c = cfg.c_in, n = cfg.n_nodes, g = cfg.c_gcn, go = cfg.c_gcn_out;
  return (c * n + n) + (c * g + g) + n * n + g * go + (go * c + c) + 2 * c;
}

template <typename T>
struct GirBlock {
  GirConfig config;
  Tensor<T> attention_weight, attention_bias;  // (N, C_in), (N)
  Tensor<T> reduce_weight, reduce_bias;        // g: (C_gcn, C_in), (C_gcn)
  Tensor<T> adjacency;                         // (N, N); A(j, i) feeds node j into node i
  Tensor<T> transform;                         // W: (C_gcn, C'_gcn)
  Tensor<T> expand_weight, expand_bias;        // h: (C_in, C'_gcn), (C_in)
  Tensor<T> bn_gamma, bn_beta, bn_running_mean, bn_running_var;
  T bn_eps = T(1e-5);
  T bn_momentum = T(0.1);

  /// Registers every tensor under `prefix` (e.g. "gir.") with zero values.
  static GirBlock create(const GirConfig& cfg, ParameterStore<T>& store, const std::string& prefix = "gir.") {
    cfg.validate();
    GirBlock b;
    b.config = cfg;
    b.attention_weight = store.add(prefix + "attention.weight", {cfg.n_nodes, cfg.c_in});
    b.attention_bias = store.add(prefix + "attention.bias", {cfg.n_nodes});
    b.reduce_weight = store.add(prefix + "reduce.weight", {cfg.c_gcn, cfg.c_in});
    b.reduce_bias = store.add(prefix + "reduce.bias", {cfg.c_gcn});
    b.adjacency = store.add(prefix + "adjacency", {cfg.n_nodes, cfg.n_nodes});
    b.transform = store.add(prefix + "transform", {cfg.c_gcn, cfg.c_gcn_out});
    b.expand_weight = store.add(prefix + "expand.weight", {cfg.c_in, cfg.c_gcn_out});
    b.expand_bias = store.add(prefix + "expand.bias", {cfg.c_in});
    b.bn_gamma = store.add(prefix + "bn.weight", {cfg.c_in});
    b.bn_beta = store.add(prefix + "bn.bias", {cfg.c_in});
    b.bn_running_mean = store.add(prefix + "bn.running_mean", {cfg.c_in}, TensorKind::buffer);
    b.bn_running_var = store.add(prefix + "bn.running_var", {cfg.c_in}, TensorKind::buffer);
    std::fill(b.bn_running_var.values().begin(), b.bn_running_var.values().end(), T(1));
    return b;
  }

  /// Uniform fan-in initialization; A uses a zero-mean uniform of extent 1/N.
  template <typename Rng>
  void initialize(Rng& rng) {
    fill_uniform(attention_weight, T(1.0 / std::sqrt(double(config.c_in))), rng);
    fill_uniform(reduce_weight, T(1.0 / std::sqrt(double(config.c_in))), rng);
    fill_uniform(adjacency, T(1.0 / double(config.n_nodes)), rng);
    fill_uniform(transform, T(1.0 / std::sqrt(double(config.c_gcn))), rng);
    fill_uniform(expand_weight, T(1.0 / std::sqrt(double(config.c_gcn_out))), rng);
    for (Tensor<T>* t : {&attention_bias, &reduce_bias, &expand_bias, &bn_beta}) {
      std::fill(t->values().begin(), t->values().end(), T(0));
    }
    std::fill(bn_gamma.values().begin(), bn_gamma.values().end(), T(1));
  }
};

/// M = (unit_conv(X))^T: raw affine responses, one row per node.
template <typename T>
Tensor<T> compute_attention(const Tensor<T>& points, const GirBlock<T>& block) {
  return transpose(unit_conv(points, block.attention_weight, block.attention_bias));
}

/// F = M g(X): node i is the M-weighted sum of all per-point reduced features.
template <typename T>
Tensor<T> project_nodes(const Tensor<T>& attention, const Tensor<T>& points, const GirBlock<T>& block) {
  return matmul(attention, unit_conv(points, block.reduce_weight, block.reduce_bias));
}

/// f_i <- relu(f_i + sum_j A(j, i) f_j), i.e. relu(F + A^T F).
template <typename T>
Tensor<T> aggregate(const Tensor<T>& nodes, const Tensor<T>& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw ShapeError("aggregate: adjacency must be square, got " + shape_str(adjacency.shape()));
  }
  if (nodes.rank() != 2 || nodes.dim(0) != adjacency.dim(0)) {
    throw ShapeError("aggregate: " + shape_str(nodes.shape()) + " node states for a " +
                     std::to_string(adjacency.dim(0)) + "-node adjacency");
  }
  return relu(add(nodes, matmul(transpose(adjacency), nodes)));
}

/// F_out = F_agg W, with no activation afterwards.
template <typename T>
Tensor<T> transform(const Tensor<T>& aggregated, const Tensor<T>& weight) {
  return matmul(aggregated, weight);
}

/// h(M^T F_out) before normalization, shape (S, C_in).
template <typename T>
Tensor<T> reproject_raw(const Tensor<T>& attention, const Tensor<T>& nodes_out, const GirBlock<T>& block) {
  return unit_conv(matmul(transpose(attention), nodes_out), block.expand_weight, block.expand_bias);
}

/// Single-item reprojection including the batch norm over the S points.
template <typename T>
Tensor<T> reproject(const Tensor<T>& attention, const Tensor<T>& nodes_out, GirBlock<T>& block, Mode mode) {
  return batchnorm3d(reproject_raw(attention, nodes_out, block), block.bn_gamma, block.bn_beta, block.bn_eps, mode,
                     block.bn_running_mean, block.bn_running_var, block.bn_momentum);
}

/// Grid-level block: X + BN(reprojected global features), same shape as X.
/// Each batch item is reasoned over independently; batch norm statistics pool
/// across the whole batch.
template <typename T>
Tensor<T> gir_forward(const Tensor<T>& grid, GirBlock<T>& block, Mode mode) {
  if (grid.rank() != 5) throw ShapeError("gir_forward expects (B, C, D, H, W), got " + shape_str(grid.shape()));
  if (grid.dim(1) != block.config.c_in) {
    throw ShapeError("gir_forward: input has " + std::to_string(grid.dim(1)) + " channels, block expects " +
                     std::to_string(block.config.c_in));
  }
  const std::size_t batch = grid.dim(0), channels = grid.dim(1);
  const std::size_t points = grid.dim(2) * grid.dim(3) * grid.dim(4);
  std::vector<Tensor<T>> branches;
  for (std::size_t n = 0; n < batch; ++n) {
    auto item = transpose(reshape(slice(grid, 0, n, 1), {channels, points}));  // (S, C_in)
    auto attention = compute_attention(item, block);
    auto nodes = project_nodes(attention, item, block);
    auto mixed = transform(aggregate(nodes, block.adjacency), block.transform);
    auto global = reproject_raw(attention, mixed, block);
    branches.push_back(reshape(transpose(global), {1, channels, grid.dim(2), grid.dim(3), grid.dim(4)}));
  }
  auto global = batchnorm3d(concat(branches, 0), block.bn_gamma, block.bn_beta, block.bn_eps, mode,
                            block.bn_running_mean, block.bn_running_var, block.bn_momentum);
  return add(grid, global);
}

}  // namespace neurogir
