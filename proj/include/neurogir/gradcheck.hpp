#pragma once

// Central-difference verification of analytic gradients (64-bit only).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "neurogir/ops.hpp"

namespace neurogir {

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-3;
  // Denominator floor for the relative error, so gradients that vanish
  // analytically (e.g. a bias feeding batch norm) compare sanely: the larger
  // of `floor` and `floor_scale` times the largest analytic |gradient|.
  double floor = 1e-6;
  double floor_scale = 1e-4;
  // One-sided slopes disagreeing by more than this fraction mark a kink.
  double kink_ratio = 0.05;
  // Entries above a tenth of the tolerance are re-probed at step/10, step/100, ... this many
  // times; truncation error shrinks with the step, a wrong gradient does not.
  std::size_t refinements = 3;
  // 0 checks every entry; otherwise a seeded sample of this many per input.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct InputCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // non-differentiable points
};

struct GradcheckReport {
  std::string op;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
  std::vector<InputCheck> inputs;

  std::size_t excluded() const {
    return std::accumulate(inputs.begin(), inputs.end(), std::size_t{0},
                           [](std::size_t n, const InputCheck& c) { return n + c.excluded; });
  }
};

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences for every input of `fn`.
/// Non-scalar outputs are reduced with fixed random weights first, which
/// exercises every output element's gradient path.
inline GradcheckReport gradcheck(const std::string& op, const GradFn& fn, std::vector<Tensor<double>> inputs,
                                 const GradcheckOptions& opts = {}, std::vector<std::string> names = {}) {
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> weights;
  auto scalar_loss = [&](const Tensor<double>& y) {
    if (y.size() == 1) return y;
    if (weights.size() != y.size()) {
      std::uniform_real_distribution<double> dist(0.5, 1.5);
      weights.resize(y.size());
      for (auto& w : weights) w = dist(rng);
    }
    return sum(mul(y, Tensor<double>::from(y.shape(), weights)));
  };

  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.clear_grad();
  }
  Tensor<double> loss = scalar_loss(fn(inputs));
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  double scale = 0.0;
  for (const auto& g : analytic)
    for (double v : g) scale = std::max(scale, std::abs(v));
  const double floor = std::max(opts.floor, opts.floor_scale * scale);

  NoGradGuard no_grad;
  auto evaluate = [&] { return scalar_loss(fn(inputs)).item(); };
  const double base = evaluate();

  GradcheckReport report{op, opts.tolerance, 0.0, true, {}};
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    InputCheck check{i < names.size() ? names[i] : "input" + std::to_string(i)};
    auto& values = inputs[i].values();
    std::vector<std::size_t> entries(values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries && entries.size() > opts.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t j : entries) {
      const double saved = values[j];
      auto probe = [&](double h) {
        values[j] = saved + h;
        const double plus = evaluate();
        values[j] = saved - h;
        const double minus = evaluate();
        values[j] = saved;
        return std::pair{plus, minus};
      };
      auto [plus, minus] = probe(opts.step);
      double err = relative_error(analytic[i][j], (plus - minus) / (2.0 * opts.step), floor);
      double h = opts.step;
      for (std::size_t r = 0; r < opts.refinements && err > 0.1 * opts.tolerance; ++r) {
        h /= 10.0;
        const auto [p, m] = probe(h);
        err = std::min(err, relative_error(analytic[i][j], (p - m) / (2.0 * h), floor));
      }
      if (err > opts.tolerance) {
        const double forward = (plus - base) / opts.step;
        const double backward = (base - minus) / opts.step;
        const double spread = std::abs(forward - backward);
        if (spread > opts.kink_ratio * std::max({std::abs(forward), std::abs(backward), floor})) {
          ++check.excluded;
          continue;
        }
      }
      ++check.checked;
      check.max_rel_error = std::max(check.max_rel_error, err);
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.inputs.push_back(check);
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  return report;
}

template <typename Rng>
Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

/// Shuffled evenly spaced values in [lo, lo + spacing * (n - 1)]: all entries
/// distinct by `spacing`, which keeps extremum selections stable under the
/// finite-difference probe.
template <typename Rng>
Tensor<double> distinct_tensor(Shape shape, Rng& rng, double lo, double spacing) {
  std::vector<double> v(numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lo + spacing * double(i);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

}  // namespace neurogir
