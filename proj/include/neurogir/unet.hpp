#pragma once

// 3D residual U-Net with an optional GIR block at the bottleneck.
//
// Default schedule 1 -> 16 -> 32 -> 64 -> 128 (bottleneck), mirrored decoder,
// 3^3 convolutions with bias, post-activation residual blocks
// (conv-BN-ReLU, conv-BN, add shortcut, ReLU), 2x max-pool downsampling,
// learnable 2x2x2 transposed-conv upsampling, skip concatenation
// [encoder feature, upsampled feature], and a 1x1x1 head emitting one logit.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "neurogir/batchnorm.hpp"
#include "neurogir/conv.hpp"
#include "neurogir/gir.hpp"
#include "neurogir/optim.hpp"
#include "neurogir/pool.hpp"

namespace neurogir {

struct UNetConfig {
  std::vector<std::size_t> level_channels{16, 32, 64};
  std::size_t bottleneck_channels = 128;
  std::size_t convs_per_level = 2;
  std::size_t kernel = 3;
  UpsampleMode upsample = UpsampleMode::transposed;
  bool gir_enabled = true;
  // 0 places the GIR block after the bottleneck; k >= 1 after encoder level k.
  std::size_t gir_level = 0;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  std::size_t levels() const { return level_channels.size(); }
  /// Every spatial extent fed to forward() must be a multiple of this.
  std::size_t spatial_multiple() const { return std::size_t{1} << levels(); }
  std::size_t gir_channels() const { return gir_level == 0 ? bottleneck_channels : level_channels.at(gir_level - 1); }

  void validate() const {
    if (level_channels.empty()) throw std::invalid_argument("model needs at least one encoder level");
    for (auto c : level_channels)
      if (c == 0) throw std::invalid_argument("encoder channel counts must be positive");
    if (bottleneck_channels == 0 || in_channels == 0 || out_channels == 0) {
      throw std::invalid_argument("channel counts must be positive");
    }
    if (convs_per_level == 0) throw std::invalid_argument("convs_per_level must be at least 1");
    if (kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd");
    if (gir_level > levels()) {
      throw std::invalid_argument("gir_level " + std::to_string(gir_level) + " exceeds the " +
                                  std::to_string(levels()) + " encoder levels");
    }
    if (gir_enabled && (gir_channels() < 4 || gir_channels() % 4 != 0)) {
      throw std::invalid_argument("channels at the GIR block must be a positive multiple of 4");
    }
  }
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight, bias;
  std::size_t padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv3d(x, weight, bias, {1, 1, 1}, {padding, padding, padding});
  }
};

template <typename T>
struct NormLayer {
  Tensor<T> gamma, beta, running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    return batchnorm3d(x, gamma, beta, eps, mode, running_mean, running_var, momentum);
  }
};

template <typename T>
struct ResidualBlock {
  std::vector<ConvLayer<T>> convs;
  std::vector<NormLayer<T>> norms;
  std::optional<ConvLayer<T>> shortcut;  // 1x1x1 projection when channels change
};

namespace detail {

template <typename T>
ConvLayer<T> make_conv(ParameterStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
                       std::size_t k) {
  return {store.add(name + ".weight", {cout, cin, k, k, k}), store.add(name + ".bias", {cout}), k / 2};
}

template <typename T>
NormLayer<T> make_norm(ParameterStore<T>& store, const std::string& name, std::size_t channels) {
  NormLayer<T> n{store.add(name + ".weight", {channels}), store.add(name + ".bias", {channels}),
                 store.add(name + ".running_mean", {channels}, TensorKind::buffer),
                 store.add(name + ".running_var", {channels}, TensorKind::buffer)};
  std::fill(n.gamma.values().begin(), n.gamma.values().end(), T(1));
  std::fill(n.running_var.values().begin(), n.running_var.values().end(), T(1));
  return n;
}

template <typename T>
ResidualBlock<T> make_block(ParameterStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                            std::size_t stages, std::size_t k) {
  ResidualBlock<T> block;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string id = std::to_string(s + 1);
    block.convs.push_back(make_conv(store, prefix + ".conv" + id, s == 0 ? cin : cout, cout, k));
    block.norms.push_back(make_norm(store, prefix + ".bn" + id, cout));
  }
  if (cin != cout) block.shortcut = make_conv(store, prefix + ".shortcut", cin, cout, 1);
  return block;
}

}  // namespace detail

/// relu(shortcut(x) + BN(conv(... relu(BN(conv(x))) ...))).
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, ResidualBlock<T>& block, Mode mode) {
  const std::size_t cin = block.convs.front().weight.dim(1);
  if (x.rank() != 5 || x.dim(1) != cin) {
    throw ShapeError("residual_block: input " + shape_str(x.shape()) + " for a block expecting " +
                     std::to_string(cin) + " channels");
  }
  const std::size_t cout = block.convs.back().weight.dim(0);
  if (!block.shortcut && cin != cout) throw ShapeError("residual_block: identity shortcut with channel change");
  Tensor<T> h = x;
  for (std::size_t s = 0; s < block.convs.size(); ++s) {
    h = block.norms[s](block.convs[s](h), mode);
    if (s + 1 < block.convs.size()) h = relu(h);
  }
  const Tensor<T> skip = block.shortcut ? (*block.shortcut)(x) : x;
  return relu(add(skip, h));
}

template <typename T>
class Model {
 public:
  struct DecoderLevel {
    Tensor<T> up_weight, up_bias;
    ResidualBlock<T> block;
  };

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  explicit Model(UNetConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& ch = config_.level_channels;
    const std::size_t k = config_.kernel, stages = config_.convs_per_level;
    std::size_t prev = config_.in_channels;
    for (std::size_t l = 0; l < ch.size(); ++l) {
      encoder_.push_back(detail::make_block(store_, "encoder.level" + std::to_string(l + 1), prev, ch[l], stages, k));
      prev = ch[l];
    }
    bottleneck_ = detail::make_block(store_, "bottleneck", prev, config_.bottleneck_channels, stages, k);
    if (config_.gir_enabled) gir_ = GirBlock<T>::create(GirConfig::defaults(config_.gir_channels()), store_);
    prev = config_.bottleneck_channels;
    decoder_.resize(ch.size());
    for (std::size_t l = ch.size(); l-- > 0;) {
      const std::string prefix = "decoder.level" + std::to_string(l + 1);
      auto& level = decoder_[l];
      std::size_t up_channels = prev;
      if (config_.upsample == UpsampleMode::transposed) {
        level.up_weight = store_.add(prefix + ".up.weight", {prev, ch[l], 2, 2, 2});
        level.up_bias = store_.add(prefix + ".up.bias", {ch[l]});
        up_channels = ch[l];
      }
      level.block = detail::make_block(store_, prefix, ch[l] + up_channels, ch[l], stages, k);
      prev = ch[l];
    }
    head_ = detail::make_conv(store_, "head", prev, config_.out_channels, 1);
  }

  /// He-style uniform weights, zero biases, unit BN scale; GIR per its own rule.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const auto& p : store_.entries()) {
      if (p.kind != TensorKind::parameter || p.name.starts_with("gir.")) continue;
      Tensor<T> t = p.value;
      const bool is_weight = p.name.ends_with(".weight") && t.rank() == 5;
      if (is_weight) {
        // Conv weights are (Cout, Cin, k^3); transposed-conv weights (Cin, Cout, 2^3).
        const bool up = p.name.ends_with(".up.weight");
        const std::size_t fan_in = (up ? t.dim(0) : t.dim(1)) * t.dim(2) * t.dim(3) * t.dim(4);
        fill_uniform(t, T(std::sqrt(6.0 / double(fan_in))), rng);
      }
    }
    if (gir_) gir_->initialize(rng);
  }

  Tensor<T> forward(const Tensor<T>& volume, Mode mode) {
    if (volume.rank() != 5 || volume.dim(1) != config_.in_channels) {
      throw ShapeError("forward expects (B, " + std::to_string(config_.in_channels) + ", D, H, W), got " +
                       shape_str(volume.shape()));
    }
    const std::size_t m = config_.spatial_multiple();
    for (std::size_t a = 2; a < 5; ++a) {
      if (volume.dim(a) % m != 0) {
        throw ShapeError("forward: spatial extent " + std::to_string(volume.dim(a)) + " is not a multiple of " +
                         std::to_string(m) + "; pad the input first");
      }
    }
    std::vector<Tensor<T>> skips;
    Tensor<T> h = volume;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      h = residual_block(h, encoder_[l], mode);
      if (gir_ && config_.gir_level == l + 1) h = gir_forward(h, *gir_, mode);
      skips.push_back(h);
      h = pool3d(h, PoolMode::max, 2, 2, 0);
    }
    h = residual_block(h, bottleneck_, mode);
    if (gir_ && config_.gir_level == 0) h = gir_forward(h, *gir_, mode);
    for (std::size_t l = decoder_.size(); l-- > 0;) {
      auto& level = decoder_[l];
      h = upsample2x(h, config_.upsample, level.up_weight, level.up_bias);
      h = residual_block(concat<T>({skips[l], h}, 1), level.block, mode);
    }
    return head_(h);
  }

  const UNetConfig& config() const { return config_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::optional<GirBlock<T>>& gir() { return gir_; }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : store_.parameters()) out.push_back(p.value);
    return out;
  }

 private:
  UNetConfig config_;
  ParameterStore<T> store_;
  std::vector<ResidualBlock<T>> encoder_;
  ResidualBlock<T> bottleneck_;
  std::optional<GirBlock<T>> gir_;
  std::vector<DecoderLevel> decoder_;
  ConvLayer<T> head_;
};

/// Total number of trainable scalars (running statistics excluded).
template <typename T>
std::size_t count_params(const Model<T>& model) {
  return model.store().count_parameters();
}

}  // namespace neurogir
