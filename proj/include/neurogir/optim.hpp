#pragma once

// Named parameters and the Adam optimizer.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "neurogir/tensor.hpp"

namespace neurogir {

enum class TensorKind { parameter, buffer };

/// A named tensor owned by a model: trainable parameter or running buffer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  TensorKind kind = TensorKind::parameter;
};

/// Ordered registry of a model's named tensors. Names are unique.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, TensorKind kind = TensorKind::parameter) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    auto t = Tensor<T>::zeros(std::move(shape));
    if (kind == TensorKind::parameter) t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, kind});
    return t;
  }

  const std::vector<Parameter<T>>& entries() const { return entries_; }

  std::vector<Parameter<T>> parameters() const {
    std::vector<Parameter<T>> out;
    for (const auto& e : entries_)
      if (e.kind == TensorKind::parameter) out.push_back(e);
    return out;
  }

  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return entries_[it->second];
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t count_parameters() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.kind == TensorKind::parameter) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.kind == TensorKind::parameter) e.value.zero_grad();
  }

 private:
  std::vector<Parameter<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T, typename Rng>
void fill_uniform(Tensor<T>& t, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-double(bound), double(bound));
  for (auto& v : t.values()) v = T(dist(rng));
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moments per parameter plus the shared step counter.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. Weight decay enters as an L2 term added
/// to the gradient before the moment updates.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].values();
    const auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = double(grad[i]) + cfg.weight_decay * double(values[i]);
      m[i] = T(cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g);
      v[i] = T(cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g);
      const double m_hat = double(m[i]) / c1;
      const double v_hat = double(v[i]) / c2;
      values[i] = T(double(values[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

}  // namespace neurogir
