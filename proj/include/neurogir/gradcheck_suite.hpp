#pragma once

// Named finite-difference checks over every differentiable operator, each run
// on several seeded shapes.

#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "neurogir/batchnorm.hpp"
#include "neurogir/conv.hpp"
#include "neurogir/gir.hpp"
#include "neurogir/gradcheck.hpp"
#include "neurogir/losses.hpp"
#include "neurogir/pool.hpp"
#include "neurogir/unet.hpp"

namespace neurogir {

struct GradcheckCase {
  std::string name;
  // One check on the shape drawn from `seed`.
  std::function<GradcheckReport(std::uint64_t seed, const GradcheckOptions&)> run;
};

struct GradcheckCaseResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t shapes = 0;
  std::size_t excluded = 0;
  bool passed = true;
};

namespace detail {

using Rng = std::mt19937_64;

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Values bounded away from zero by `gap`, random sign.
inline Tensor<double> off_zero_tensor(Shape shape, Rng& rng, double gap = 0.05) {
  std::uniform_real_distribution<double> mag(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

inline Tensor<double> binary_tensor(Shape shape, Rng& rng, double p = 0.4) {
  std::bernoulli_distribution on(p);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = on(rng) ? 1.0 : 0.0;
  return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Distinct probabilities in (0, 1), spaced well beyond the probe step.
inline Tensor<double> distinct_prob(Shape shape, Rng& rng) {
  const std::size_t n = numel(shape);
  return distinct_tensor(std::move(shape), rng, 0.05, 0.9 / double(n));
}

inline GirBlock<double> random_gir(std::size_t c_in, ParameterStore<double>& store, Rng& rng) {
  auto block = GirBlock<double>::create(GirConfig::defaults(c_in), store);
  block.initialize(rng);
  for (Tensor<double>* t : {&block.attention_bias, &block.reduce_bias, &block.expand_bias, &block.bn_beta}) {
    *t = random_tensor(t->shape(), rng, -0.5, 0.5);
  }
  block.bn_gamma = random_tensor(block.bn_gamma.shape(), rng, 0.5, 1.5);
  return block;
}

}  // namespace detail

/// Every operator check the library ships. Pooling and ReLU inputs are built
/// so no probe crosses a selection boundary or the kink.
inline std::vector<GradcheckCase> default_gradcheck_cases() {
  using detail::pick;
  using detail::Rng;
  std::vector<GradcheckCase> cases;

  cases.push_back({"conv3d", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 0, 1) ? 3 : 1;
                     const Triple stride{pick(rng, 1, 2), 1, pick(rng, 1, 2)};
                     const std::size_t pad = k / 2 * pick(rng, 0, 1);
                     auto x = random_tensor({pick(rng, 1, 2), cin, pick(rng, 3, 5), pick(rng, 3, 4), pick(rng, 3, 5)}, rng);
                     auto w = random_tensor({cout, cin, k, k, k}, rng);
                     auto b = random_tensor({cout}, rng);
                     return gradcheck("conv3d", [&](const auto& in) {
                       return conv3d(in[0], in[1], in[2], stride, {pad, pad, pad});
                     }, {x, w, b}, o, {"x", "weight", "bias"});
                   }});

  cases.push_back({"unit_conv", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t s = pick(rng, 2, 12), cin = pick(rng, 1, 6), cout = pick(rng, 1, 6);
                     auto x = random_tensor({s, cin}, rng);
                     auto w = random_tensor({cout, cin}, rng);
                     auto b = random_tensor({cout}, rng);
                     return gradcheck("unit_conv", [](const auto& in) { return unit_conv(in[0], in[1], in[2]); },
                                      {x, w, b}, o, {"x", "weight", "bias"});
                   }});

  for (PoolMode mode : {PoolMode::max, PoolMode::min}) {
    const std::string name = mode == PoolMode::max ? "pool3d_max" : "pool3d_min";
    cases.push_back({name, [mode, name](std::uint64_t seed, const GradcheckOptions& o) {
                       Rng rng(seed);
                       const bool down = seed % 2 == 1;
                       const Shape shape{pick(rng, 1, 2), pick(rng, 1, 2), 2 * pick(rng, 2, 3), 2 * pick(rng, 1, 3),
                                         2 * pick(rng, 2, 3)};
                       auto x = distinct_tensor(shape, rng, -1.0, 0.01);
                       return gradcheck(name, [&](const auto& in) {
                         return down ? pool3d(in[0], mode, 2, 2, 0) : pool3d(in[0], mode, 3, 1, 1);
                       }, {x}, o, {"x"});
                     }});
  }

  cases.push_back({"relu", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     auto x = detail::off_zero_tensor({pick(rng, 1, 4), pick(rng, 2, 9)}, rng);
                     return gradcheck("relu", [](const auto& in) { return relu(in[0]); }, {x}, o, {"x"});
                   }});

  cases.push_back({"sigmoid", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     auto x = random_tensor({pick(rng, 1, 4), pick(rng, 2, 9)}, rng, -4.0, 4.0);
                     return gradcheck("sigmoid", [](const auto& in) { return sigmoid(in[0]); }, {x}, o, {"x"});
                   }});

  cases.push_back({"batchnorm3d", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t c = pick(rng, 1, 3);
                     auto x = random_tensor({pick(rng, 1, 3), c, pick(rng, 1, 3), pick(rng, 2, 3), pick(rng, 2, 3)}, rng);
                     auto gamma = random_tensor({c}, rng, 0.5, 1.5);
                     auto beta = random_tensor({c}, rng);
                     auto rm = Tensor<double>::zeros({c});
                     auto rv = Tensor<double>::full({c}, 1.0);
                     return gradcheck("batchnorm3d", [&](const auto& in) {
                       return batchnorm3d(in[0], in[1], in[2], 1e-5, Mode::train, rm, rv);
                     }, {x, gamma, beta}, o, {"x", "gamma", "beta"});
                   }});

  cases.push_back({"matmul", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t m = pick(rng, 1, 6), k = pick(rng, 1, 6), n = pick(rng, 1, 6);
                     auto a = random_tensor({m, k}, rng);
                     auto b = random_tensor({k, n}, rng);
                     return gradcheck("matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {a, b}, o,
                                      {"a", "b"});
                   }});

  cases.push_back({"upsample_transposed", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                     auto x = random_tensor({pick(rng, 1, 2), cin, pick(rng, 1, 3), pick(rng, 1, 2), pick(rng, 1, 3)}, rng);
                     auto w = random_tensor({cin, cout, 2, 2, 2}, rng);
                     auto b = random_tensor({cout}, rng);
                     return gradcheck("upsample_transposed", [](const auto& in) {
                       return upsample2x(in[0], UpsampleMode::transposed, in[1], in[2]);
                     }, {x, w, b}, o, {"x", "weight", "bias"});
                   }});

  cases.push_back({"upsample_nearest", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     auto x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 2),
                                             pick(rng, 1, 3)}, rng);
                     return gradcheck("upsample_nearest", [](const auto& in) {
                       return upsample2x(in[0], UpsampleMode::nearest);
                     }, {x}, o, {"x"});
                   }});

  // The whole GIR chain: attention, projection, aggregation, transform,
  // reprojection, batch norm and the residual add.
  cases.push_back({"gir_forward", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t c = 4 * pick(rng, 1, 2);
                     ParameterStore<double> store;
                     auto block = detail::random_gir(c, store, rng);
                     auto x = random_tensor({pick(rng, 1, 2), c, pick(rng, 1, 2), pick(rng, 2, 3), pick(rng, 1, 3)}, rng);
                     std::vector<Tensor<double>> inputs{x};
                     std::vector<std::string> names{"x"};
                     for (const auto& p : store.parameters()) {
                       inputs.push_back(p.value);
                       names.push_back(p.name);
                     }
                     return gradcheck("gir_forward", [&](const auto& in) { return gir_forward(in[0], block, Mode::train); },
                                      inputs, o, names);
                   }});

  cases.push_back({"gir_aggregate", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t n = pick(rng, 1, 5), c = pick(rng, 1, 4);
                     auto f = random_tensor({n, c}, rng);
                     auto a = random_tensor({n, n}, rng);
                     return gradcheck("gir_aggregate", [](const auto& in) { return aggregate(in[0], in[1]); }, {f, a}, o,
                                      {"nodes", "adjacency"});
                   }});

  cases.push_back({"soft_skeleton", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t iters = pick(rng, 1, 3);
                     auto p = detail::distinct_prob({1, 1, pick(rng, 3, 5), pick(rng, 3, 5), pick(rng, 3, 5)}, rng);
                     return gradcheck("soft_skeleton", [iters](const auto& in) { return soft_skeleton(in[0], iters); },
                                      {p}, o, {"prob"});
                   }});

  cases.push_back({"skeleton_loss", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const Shape shape{pick(rng, 1, 2), 1, pick(rng, 3, 5), pick(rng, 3, 4), pick(rng, 3, 5)};
                     auto p = detail::distinct_prob(shape, rng);
                     auto y = detail::binary_tensor(shape, rng);
                     LossConfig cfg;
                     cfg.skeleton_iters = pick(rng, 1, 3);
                     cfg.delta = seed % 2 ? 1.0 : 0.5;
                     return gradcheck("skeleton_loss", [&](const auto& in) { return skeleton_loss(in[0], y, cfg); }, {p},
                                      o, {"prob"});
                   }});

  cases.push_back({"bce", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const Shape shape{pick(rng, 1, 3), 1, pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)};
                     auto z = random_tensor(shape, rng, -5.0, 5.0);
                     auto y = random_tensor(shape, rng, 0.0, 1.0);
                     return gradcheck("bce", [](const auto& in) { return bce_loss(in[0], in[1]); }, {z, y}, o,
                                      {"logits", "label"});
                   }});

  cases.push_back({"compound_loss", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const Shape shape{pick(rng, 1, 2), 1, pick(rng, 3, 4), pick(rng, 3, 4), pick(rng, 3, 4)};
                     auto z = distinct_tensor(shape, rng, -3.0, 6.0 / double(numel(shape)));
                     auto y = detail::binary_tensor(shape, rng);
                     LossConfig cfg;
                     cfg.skeleton_iters = 2;
                     const double weight = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
                     return gradcheck("compound_loss", [&](const auto& in) {
                       return compound_loss(in[0], y, weight, cfg).total;
                     }, {z}, o, {"logits"});
                   }});

  cases.push_back({"residual_block", [](std::uint64_t seed, const GradcheckOptions& o) {
                     Rng rng(seed);
                     const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                     ParameterStore<double> store;
                     auto block = detail::make_block(store, "block", cin, cout, 2, 3);
                     std::vector<Tensor<double>> inputs{
                         random_tensor({pick(rng, 1, 2), cin, pick(rng, 2, 3), pick(rng, 2, 3), pick(rng, 2, 3)}, rng)};
                     std::vector<std::string> names{"x"};
                     for (const auto& p : store.parameters()) {
                       Tensor<double> t = p.value;
                       t.values() = random_tensor(t.shape(), rng, -0.6, 0.6).values();
                       inputs.push_back(t);
                       names.push_back(p.name);
                     }
                     return gradcheck("residual_block", [&](const auto& in) {
                       return residual_block(in[0], block, Mode::train);
                     }, inputs, o, names);
                   }});

  // End to end through a two-level network; parameters are subsampled.
  cases.push_back({"backbone", [](std::uint64_t seed, const GradcheckOptions& o) {
                     UNetConfig cfg;
                     cfg.level_channels = {2, 4};
                     cfg.bottleneck_channels = 8;
                     cfg.upsample = seed % 2 ? UpsampleMode::nearest : UpsampleMode::transposed;
                     Model<double> model(cfg);
                     model.initialize(seed);
                     Rng rng(seed);
                     std::vector<Tensor<double>> inputs{random_tensor({1, 1, 8, 8, 4 * (1 + seed % 2)}, rng)};
                     std::vector<std::string> names{"x"};
                     for (const auto& p : model.store().parameters()) {
                       inputs.push_back(p.value);
                       names.push_back(p.name);
                     }
                     GradcheckOptions sub = o;
                     if (!sub.max_entries) sub.max_entries = 3;
                     sub.seed = seed;
                     return gradcheck("backbone", [&](const auto& in) { return model.forward(in[0], Mode::train); },
                                      inputs, sub, names);
                   }});

  return cases;
}

/// Runs `cases` on seeds 0 .. seeds-1 and prints one line per case.
inline std::vector<GradcheckCaseResult> run_gradcheck_suite(const std::vector<GradcheckCase>& cases,
                                                            const GradcheckOptions& opts, std::size_t seeds = 5,
                                                            std::ostream* log = nullptr) {
  std::vector<GradcheckCaseResult> out;
  for (const auto& c : cases) {
    GradcheckCaseResult r{c.name};
    for (std::uint64_t s = 0; s < seeds; ++s) {
      GradcheckOptions o = opts;
      o.seed = s;
      const GradcheckReport rep = c.run(s, o);
      r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
      r.excluded += rep.excluded();
      r.passed = r.passed && rep.passed;
      ++r.shapes;
    }
    if (log) {
      *log << (r.passed ? "PASS " : "FAIL ") << c.name << "  max_rel_error=" << r.max_rel_error
           << "  shapes=" << r.shapes << "  kinks_excluded=" << r.excluded << '\n';
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace neurogir
