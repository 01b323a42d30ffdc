#pragma once

// Soft skeletonization, the skeleton loss, binary cross entropy and the
// progress-scheduled compound of the two.

#include <cmath>
#include <string>

#include "neurogir/ops.hpp"
#include "neurogir/pool.hpp"

namespace neurogir {

enum class LossMode { ce_only, compound };

inline LossMode parse_loss_mode(std::string_view name) {
  if (name == "ce_only") return LossMode::ce_only;
  if (name == "compound") return LossMode::compound;
  throw std::invalid_argument("unknown loss mode '" + std::string(name) + "' (expected ce_only|compound)");
}

inline std::string to_string(LossMode mode) { return mode == LossMode::ce_only ? "ce_only" : "compound"; }

struct LossConfig {
  double delta = 1.0;
  std::size_t skeleton_iters = 5;
  std::size_t schedule_epoch_knee = 200;
  std::size_t schedule_epoch_cap = 300;
  LossMode mode = LossMode::compound;

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("loss delta must be positive");
    if (schedule_epoch_knee == 0 || schedule_epoch_cap == 0) {
      throw std::invalid_argument("schedule epoch constants must be positive");
    }
  }
};

struct Progress {
  std::size_t current_iteration = 0;
  std::size_t total_iterations = 0;
  std::size_t epochs_planned = 0;
};

template <typename T>
Tensor<T> soft_erode(const Tensor<T>& x) { return pool3d(x, PoolMode::min, 3, 1, 1); }

template <typename T>
Tensor<T> soft_dilate(const Tensor<T>& x) { return pool3d(x, PoolMode::max, 3, 1, 1); }

template <typename T>
Tensor<T> soft_open(const Tensor<T>& x) { return soft_dilate(soft_erode(x)); }

/// Iterated min/max-pool opening residues, accumulated as a soft union.
template <typename T>
Tensor<T> soft_skeleton(const Tensor<T>& prob, std::size_t iters) {
  for (T v : prob.values()) {
    if (v < T(-1e-6) || v > T(1 + 1e-6)) {
      throw std::invalid_argument("soft_skeleton: input value " + std::to_string(double(v)) + " outside [0, 1]");
    }
  }
  Tensor<T> img = prob;
  Tensor<T> skel = relu(sub(img, soft_open(img)));
  for (std::size_t i = 0; i < iters; ++i) {
    img = soft_erode(img);
    Tensor<T> delta = relu(sub(img, soft_open(img)));
    skel = add(skel, relu(sub(delta, mul(skel, delta))));
  }
  return skel;
}

/// One minus the harmonic mean of the smoothed skeleton precision
/// (|S_p . S_l| + d) / (|S_p| + d) and recall (|S_p . S_l| + d) / (|S_l| + d),
/// sums running over each batch item's whole volume; averaged over the batch.
template <typename T>
Tensor<T> skeleton_loss_from_skeletons(const Tensor<T>& skel_pred, const Tensor<T>& skel_label, double delta) {
  if (skel_pred.shape() != skel_label.shape()) {
    throw ShapeError("skeleton_loss: prediction " + shape_str(skel_pred.shape()) + " vs label " +
                     shape_str(skel_label.shape()));
  }
  const std::size_t batch = skel_pred.rank() == 5 ? skel_pred.dim(0) : 1;
  const T d = T(delta);
  Tensor<T> total;
  for (std::size_t n = 0; n < batch; ++n) {
    const Tensor<T> sp = skel_pred.rank() == 5 ? slice(skel_pred, 0, n, 1) : skel_pred;
    const Tensor<T> sl = skel_label.rank() == 5 ? slice(skel_label, 0, n, 1) : skel_label;
    const Tensor<T> overlap = add_scalar(sum(mul(sp, sl)), d);
    const Tensor<T> precision = div(overlap, add_scalar(sum(sp), d));
    const Tensor<T> recall = div(overlap, add_scalar(sum(sl), d));
    const Tensor<T> f = div(mul_scalar(mul(precision, recall), T(2)), add(precision, recall));
    const Tensor<T> item = rsub_scalar(T(1), f);
    total = total.defined() ? add(total, item) : item;
  }
  return mul_scalar(total, T(1) / T(batch));
}

template <typename T>
Tensor<T> skeleton_loss(const Tensor<T>& pred_prob, const Tensor<T>& label, const LossConfig& cfg) {
  if (pred_prob.shape() != label.shape()) {
    throw ShapeError("skeleton_loss: prediction " + shape_str(pred_prob.shape()) + " vs label " +
                     shape_str(label.shape()));
  }
  Tensor<T> label_skel;
  {
    NoGradGuard no_grad;
    label_skel = soft_skeleton(label, cfg.skeleton_iters);
  }
  return skeleton_loss_from_skeletons(soft_skeleton(pred_prob, cfg.skeleton_iters), label_skel, cfg.delta);
}

/// Mean binary cross entropy from logits: max(z, 0) - z y + log(1 + e^{-|z|}).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& label) {
  if (logits.shape() != label.shape()) {
    throw ShapeError("bce_loss: logits " + shape_str(logits.shape()) + " vs label " + shape_str(label.shape()));
  }
  const auto& z = logits.values();
  const auto& y = label.values();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = double(z[i]);
    total += std::max(zi, 0.0) - zi * double(y[i]) + std::log1p(std::exp(-std::abs(zi)));
  }
  const std::size_t n = z.size();
  return make_result<T>("bce_loss", {}, {T(total / double(n))}, {logits, label}, [n](Node<T>& self) {
    const auto& z = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    const T scale = self.grad[0] / T(n);
    if (auto* gz = input_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*gz)[i] += scale * (sigmoid_value(z[i]) - y[i]);
    }
    if (auto* gy = input_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) (*gy)[i] -= scale * z[i];
    }
  });
}

/// Training progress p in [0, 2]. Up to the knee epoch, p is the iteration
/// count over the iterations of `knee` epochs; past it, p is twice the count
/// over the iterations of `cap` epochs.
inline double progress_ratio(const Progress& pr, const LossConfig& cfg) {
  if (pr.total_iterations == 0 || pr.epochs_planned == 0) throw std::invalid_argument("progress: zero total");
  if (pr.current_iteration > pr.total_iterations) throw std::invalid_argument("progress: current exceeds total");
  const double per_epoch = double(pr.total_iterations) / double(pr.epochs_planned);
  const double epoch = double(pr.current_iteration) / per_epoch;
  const double it = double(pr.current_iteration);
  if (epoch <= double(cfg.schedule_epoch_knee)) return it / (per_epoch * double(cfg.schedule_epoch_knee));
  return 2.0 * it / (per_epoch * double(cfg.schedule_epoch_cap));
}

/// 2 / (1 + e^{-10 p}) - 1, rising from 0 towards 1.
inline double alpha(double p) { return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0; }

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double ce = 0.0;
  double skeleton = 0.0;
  double alpha = 1.0;
};

/// alpha * BCE + (1 - alpha) * skeleton loss on sigmoid(logits); pure BCE in ce_only mode.
template <typename T>
LossTerms<T> compound_loss(const Tensor<T>& logits, const Tensor<T>& label, double weight_ce, const LossConfig& cfg) {
  LossTerms<T> out;
  Tensor<T> ce = bce_loss(logits, label);
  out.ce = double(ce.item());
  if (cfg.mode == LossMode::ce_only) {
    out.total = ce;
    return out;
  }
  Tensor<T> skl = skeleton_loss(sigmoid(logits), label, cfg);
  out.skeleton = double(skl.item());
  out.alpha = weight_ce;
  out.total = add(mul_scalar(ce, T(weight_ce)), mul_scalar(skl, T(1.0 - weight_ce)));
  return out;
}

template <typename T>
LossTerms<T> compound_loss(const Tensor<T>& logits, const Tensor<T>& label, const Progress& pr,
                           const LossConfig& cfg) {
  return compound_loss(logits, label, alpha(progress_ratio(pr, cfg)), cfg);
}

}  // namespace neurogir
