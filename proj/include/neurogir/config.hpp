#pragma once

// Run configuration. One JSON document; every section and key is optional,
// missing keys take the defaults of the corresponding struct, unknown keys are
// an error. Relative data paths resolve against the config file's directory.
//
// {
//   "model": {"level_channels": [16, 32, 64], "bottleneck_channels": 128,
//             "convs_per_level": 2, "kernel": 3, "upsample": "transposed",
//             "gir": true, "gir_level": 0},
//   "loss":  {"mode": "compound", "delta": 1.0, "skeleton_iters": 5,
//             "schedule_epoch_knee": 200, "schedule_epoch_cap": 300},
//   "train": {"lr": 1e-3, "weight_decay": 5e-4, "batch_size": 8, "patience": 20,
//             "monitor": "val_best_f1", "max_epochs": 300, "eval_every": 50},
//   "data":  {"train_dir": "...", "val_dir": "...", "patch": [64, 128, 128],
//             "gaussian_sigma": 0.8, "flip": true, "rotate": true, "crop": true,
//             "overlap": 0.5},
//   "seed": 0
// }

#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "neurogir/losses.hpp"
#include "neurogir/trainer.hpp"
#include "neurogir/unet.hpp"

namespace neurogir {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  UNetConfig model;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 0;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& section, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) {
      throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"model",
           {{"level_channels", c.model.level_channels},
            {"bottleneck_channels", c.model.bottleneck_channels},
            {"convs_per_level", c.model.convs_per_level},
            {"kernel", c.model.kernel},
            {"upsample", to_string(c.model.upsample)},
            {"gir", c.model.gir_enabled},
            {"gir_level", c.model.gir_level}}},
          {"loss",
           {{"mode", to_string(c.loss.mode)},
            {"delta", c.loss.delta},
            {"skeleton_iters", c.loss.skeleton_iters},
            {"schedule_epoch_knee", c.loss.schedule_epoch_knee},
            {"schedule_epoch_cap", c.loss.schedule_epoch_cap}}},
          {"train",
           {{"lr", c.train.lr},
            {"weight_decay", c.train.weight_decay},
            {"batch_size", c.train.batch_size},
            {"patience", c.train.patience},
            {"monitor", c.train.monitor},
            {"max_epochs", c.train.max_epochs},
            {"eval_every", c.train.eval_every}}},
          {"data",
           {{"train_dir", c.data.train_dir},
            {"val_dir", c.data.val_dir},
            {"patch", c.data.patch},
            {"gaussian_sigma", c.data.gaussian_sigma},
            {"flip", c.data.flip},
            {"rotate", c.data.rotate},
            {"crop", c.data.crop},
            {"overlap", c.data.overlap}}},
          {"seed", c.seed}};
}

inline UNetConfig model_config_from_json(const nlohmann::json& m) {
  detail::reject_unknown(m, "model",
                         {"level_channels", "bottleneck_channels", "convs_per_level", "kernel", "upsample", "gir",
                          "gir_level"});
  UNetConfig c;
  detail::read(m, "level_channels", c.level_channels);
  detail::read(m, "bottleneck_channels", c.bottleneck_channels);
  detail::read(m, "convs_per_level", c.convs_per_level);
  detail::read(m, "kernel", c.kernel);
  detail::read(m, "gir", c.gir_enabled);
  detail::read(m, "gir_level", c.gir_level);
  if (m.contains("upsample")) c.upsample = parse_upsample_mode(m.at("upsample").get<std::string>());
  return c;
}

/// Parses and validates; `base` anchors relative data paths.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  RunConfig c;
  try {
    detail::reject_unknown(j, "", {"model", "loss", "train", "data", "seed"});
    detail::read(j, "seed", c.seed);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      detail::reject_unknown(l, "loss", {"mode", "delta", "skeleton_iters", "schedule_epoch_knee", "schedule_epoch_cap"});
      if (l.contains("mode")) c.loss.mode = parse_loss_mode(l.at("mode").get<std::string>());
      detail::read(l, "delta", c.loss.delta);
      detail::read(l, "skeleton_iters", c.loss.skeleton_iters);
      detail::read(l, "schedule_epoch_knee", c.loss.schedule_epoch_knee);
      detail::read(l, "schedule_epoch_cap", c.loss.schedule_epoch_cap);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown(t, "train",
                             {"lr", "weight_decay", "batch_size", "patience", "monitor", "max_epochs", "eval_every"});
      detail::read(t, "lr", c.train.lr);
      detail::read(t, "weight_decay", c.train.weight_decay);
      detail::read(t, "batch_size", c.train.batch_size);
      detail::read(t, "patience", c.train.patience);
      detail::read(t, "monitor", c.train.monitor);
      detail::read(t, "max_epochs", c.train.max_epochs);
      detail::read(t, "eval_every", c.train.eval_every);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::reject_unknown(d, "data",
                             {"train_dir", "val_dir", "patch", "gaussian_sigma", "flip", "rotate", "crop", "overlap"});
      detail::read(d, "train_dir", c.data.train_dir);
      detail::read(d, "val_dir", c.data.val_dir);
      detail::read(d, "patch", c.data.patch);
      detail::read(d, "gaussian_sigma", c.data.gaussian_sigma);
      detail::read(d, "flip", c.data.flip);
      detail::read(d, "rotate", c.data.rotate);
      detail::read(d, "crop", c.data.crop);
      detail::read(d, "overlap", c.data.overlap);
    }
    c.model.validate();
    c.loss.validate();
    c.train.seed = c.seed;
    c.train.validate();
    for (auto p : c.data.patch) {
      if (p == 0 || p % c.model.spatial_multiple() != 0) {
        throw ConfigError("data.patch extents must be positive multiples of " +
                          std::to_string(c.model.spatial_multiple()));
      }
    }
    if (c.data.gaussian_sigma < 0.0) throw ConfigError("data.gaussian_sigma must be non-negative");
    if (!(c.data.overlap >= 0.0 && c.data.overlap <= 0.9)) throw ConfigError("data.overlap must lie in [0, 0.9]");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto anchor = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative() && !base.empty()) p = (base / p).lexically_normal().string();
  };
  anchor(c.data.train_dir);
  anchor(c.data.val_dir);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

}  // namespace neurogir
