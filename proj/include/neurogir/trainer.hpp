#pragma once

// Training loop with progress-scheduled loss, validation by best-F1 sweep,
// early stopping, and tiled inference over whole volumes.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurogir/losses.hpp"
#include "neurogir/metrics.hpp"
#include "neurogir/optim.hpp"
#include "neurogir/preprocess.hpp"
#include "neurogir/unet.hpp"

namespace neurogir {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 5e-4;
  std::size_t batch_size = 8;
  std::size_t patience = 20;             // validation rounds without improvement
  std::string monitor = "val_best_f1";   // mean per-volume best F1 on the validation set
  std::size_t max_epochs = 300;
  std::size_t eval_every = 50;           // iterations between validation rounds
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be non-negative");
    if (batch_size == 0) throw std::invalid_argument("train.batch_size must be positive");
    if (patience == 0) throw std::invalid_argument("train.patience must be at least 1");
    if (max_epochs == 0 || eval_every == 0) throw std::invalid_argument("train.max_epochs and eval_every must be positive");
    if (monitor != "val_best_f1") throw std::invalid_argument("train.monitor must be 'val_best_f1'");
  }
};

struct DataConfig {
  std::string train_dir;
  std::string val_dir;
  Dims patch{64, 128, 128};  // (D, H, W)
  double gaussian_sigma = 0.8;  // 0 disables prefiltering
  bool flip = true;
  bool rotate = true;
  bool crop = true;
  double overlap = 0.5;  // sliding-window tile overlap fraction
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model input preparation: the image Gaussian-filtered when sigma > 0.
inline Sample prepare_sample(const Sample& raw, double gaussian_sigma) {
  check_sample(raw);
  if (gaussian_sigma <= 0.0) return raw;
  return {gaussian3d(raw.image, gaussian_sigma), raw.label};
}

template <typename T>
Tensor<T> stack_volumes(const std::vector<const Volume*>& volumes) {
  const Dims d = volumes.front()->dims;
  std::vector<T> data;
  data.reserve(volumes.size() * voxel_count(d));
  for (const Volume* v : volumes) {
    if (v->dims != d) throw ShapeError("stack_volumes: mixed volume dims");
    for (std::size_t i = 0; i < v->size(); ++i) data.push_back(T(v->value(i)));
  }
  return Tensor<T>::from({volumes.size(), 1, d[0], d[1], d[2]}, std::move(data));
}

/// Probability map from overlapping tiles. The volume is zero-padded so that
/// tiles at a uniform stride of floor(patch * (1 - overlap)) cover it; each
/// voxel is the plain mean of the sigmoid outputs of the tiles covering it.
template <typename T>
Volume sliding_window_predict(Model<T>& model, const Volume& image, Dims patch, double overlap) {
  if (!(overlap >= 0.0 && overlap <= 0.9)) throw std::invalid_argument("overlap must lie in [0, 0.9]");
  const std::size_t m = model.config().spatial_multiple();
  for (auto p : patch) {
    if (p == 0 || p % m != 0) {
      throw std::invalid_argument("patch extents must be positive multiples of " + std::to_string(m));
    }
  }
  std::array<std::vector<std::size_t>, 3> starts;
  Dims padded{};
  for (int a = 0; a < 3; ++a) {
    const std::size_t stride = std::max<std::size_t>(1, std::size_t(std::floor(double(patch[a]) * (1.0 - overlap))));
    std::size_t pos = 0;
    starts[a].push_back(0);
    while (pos + patch[a] < image.dims[a]) {
      pos += stride;
      starts[a].push_back(pos);
    }
    padded[a] = pos + patch[a];
  }
  if (padded[0] < patch[0] || padded[1] < patch[1] || padded[2] < patch[2]) {
    throw std::invalid_argument("patch larger than padded volume");
  }
  const Volume source = crop(image.dtype() == DType::f32 ? image : normalize_image(image), {0, 0, 0}, padded);
  std::vector<double> acc(voxel_count(padded), 0.0);
  std::vector<std::uint32_t> hits(voxel_count(padded), 0);
  NoGradGuard no_grad;
  for (std::size_t z0 : starts[0])
    for (std::size_t y0 : starts[1])
      for (std::size_t x0 : starts[2]) {
        const Volume tile = crop(source, {z0, y0, x0}, patch);
        const Tensor<T> prob = sigmoid(model.forward(stack_volumes<T>({&tile}), Mode::infer));
        const auto& pv = prob.values();
        for (std::size_t z = 0; z < patch[0]; ++z)
          for (std::size_t y = 0; y < patch[1]; ++y)
            for (std::size_t x = 0; x < patch[2]; ++x) {
              const std::size_t dst = ((z0 + z) * padded[1] + y0 + y) * padded[2] + x0 + x;
              acc[dst] += double(pv[(z * patch[1] + y) * patch[2] + x]);
              ++hits[dst];
            }
      }
  Volume out = Volume::zeros_f32(image.dims);
  for (std::size_t z = 0; z < image.dims[0]; ++z)
    for (std::size_t y = 0; y < image.dims[1]; ++y)
      for (std::size_t x = 0; x < image.dims[2]; ++x) {
        const std::size_t src = (z * padded[1] + y) * padded[2] + x;
        out.f32()[out.index(z, y, x)] = float(acc[src] / double(hits[src]));
      }
  return out;
}

struct HistoryRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double progress = 0.0;
  double alpha = 0.0;
  double loss = 0.0;
  double loss_ce = 0.0;
  double loss_skeleton = 0.0;
  std::optional<double> val_f1;

  nlohmann::json to_json() const {
    nlohmann::json j{{"iteration", iteration}, {"epoch", epoch},     {"p", progress},
                     {"alpha", alpha},         {"loss", loss},       {"loss_ce", loss_ce},
                     {"loss_skl", loss_skeleton}};
    if (val_f1) j["val_f1"] = *val_f1;
    return j;
  }
};

struct TrainResult {
  double best_val_f1 = -1.0;
  std::size_t best_iteration = 0;
  std::size_t iterations = 0;
  bool stopped_early = false;
  std::vector<HistoryRecord> history;
};

/// Mean over volumes of each volume's best F1 (model input = prepared image).
template <typename T>
double validation_score(Model<T>& model, const std::vector<Sample>& val, Dims patch, double overlap) {
  if (val.empty()) throw std::invalid_argument("validation set is empty");
  double total = 0.0;
  for (const auto& s : val) total += threshold_sweep(sliding_window_predict(model, s.image, patch, overlap), s.label).best.f1;
  return total / double(val.size());
}

namespace detail {

inline std::vector<std::vector<float>> snapshot(const ParameterStore<float>& store) {
  std::vector<std::vector<float>> out;
  for (const auto& p : store.entries()) out.push_back(p.value.values());
  return out;
}

inline void restore(ParameterStore<float>& store, const std::vector<std::vector<float>>& state) {
  for (std::size_t i = 0; i < state.size(); ++i) {
    Tensor<float> t = store.entries()[i].value;
    t.values() = state[i];
  }
}

}  // namespace detail

/// Runs the optimization protocol on prepared samples. On return the model
/// holds the best validation state. History lines are streamed to `history`
/// as JSON when given.
inline TrainResult train(Model<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const TrainConfig& cfg, const LossConfig& loss_cfg, const DataConfig& data,
                         std::ostream* history = nullptr) {
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  if (cfg.lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
  loss_cfg.validate();
  const std::size_t per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.max_epochs;
  auto params = model.trainable();
  AdamState<float> adam;
  const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  TrainResult result;
  std::vector<std::vector<float>> best_state = detail::snapshot(model.store());
  std::size_t stale_rounds = 0;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs && !result.stopped_early; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq shuffle_seq{cfg.seed, std::uint64_t(epoch), std::uint64_t(0x5eed)};
    std::mt19937_64 shuffle_rng(shuffle_seq);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      HistoryRecord rec;
      rec.iteration = ++iteration;
      rec.epoch = epoch + 1;
      const Progress pr{iteration - 1, total, cfg.max_epochs};
      rec.progress = progress_ratio(pr, loss_cfg);
      rec.alpha = alpha(rec.progress);

      std::vector<Sample> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        const std::size_t idx = order[k];
        std::seed_seq seq{cfg.seed, std::uint64_t(epoch), std::uint64_t(idx)};
        std::mt19937_64 rng(seq);
        AugmentDraw draw = draw_augment(rng, train_set[idx].image.dims, data.patch);
        if (!data.flip) draw.flip_h = draw.flip_w = false;
        if (!data.rotate) draw.quarter_turns = 0;
        if (!data.crop) draw.crop_origin = {0, 0, 0};
        batch.push_back(apply_augment(train_set[idx], draw, data.patch));
      }
      std::vector<const Volume*> images, labels;
      for (const auto& s : batch) {
        images.push_back(&s.image);
        labels.push_back(&s.label);
      }
      try {
        const Tensor<float> x = stack_volumes<float>(images);
        const Tensor<float> y = stack_volumes<float>(labels);
        LossTerms<float> terms = compound_loss(model.forward(x, Mode::train), y, rec.alpha, loss_cfg);
        rec.loss = double(terms.total.item());
        rec.loss_ce = terms.ce;
        rec.loss_skeleton = terms.skeleton;
        model.store().zero_grad();
        terms.total.backward();
      } catch (const NonFiniteError& e) {
        std::ostringstream os;
        os << "training diverged at iteration " << iteration << " (alpha " << rec.alpha << ", lr " << cfg.lr
           << "): " << e.what();
        throw TrainingDiverged(os.str());
      }
      if (cfg.lr > 0.0) adam_step(params, adam, adam_cfg);
      for (const auto& p : params) detail::check_finite("adam_step", p.values());

      const bool last = epoch + 1 == cfg.max_epochs && start + cfg.batch_size >= order.size();
      if (iteration % cfg.eval_every == 0 || last) {
        if (val_set.empty()) throw std::invalid_argument("validation set is empty");
        rec.val_f1 = validation_score(model, val_set, data.patch, data.overlap);
        if (*rec.val_f1 > result.best_val_f1) {
          result.best_val_f1 = *rec.val_f1;
          result.best_iteration = iteration;
          best_state = detail::snapshot(model.store());
          stale_rounds = 0;
        } else if (++stale_rounds >= cfg.patience) {
          result.stopped_early = true;
        }
      }
      result.history.push_back(rec);
      if (history) *history << rec.to_json().dump() << '\n';
      if (result.stopped_early) break;
    }
  }
  result.iterations = iteration;
  detail::restore(model.store(), best_state);
  return result;
}

}  // namespace neurogir
