#include <random>

#include <gtest/gtest.h>

#include "neurogir/gradcheck.hpp"
#include "neurogir/unet.hpp"

using namespace neurogir;

namespace {

UNetConfig tiny(bool gir) {
  UNetConfig c;
  c.level_channels = {2, 4};
  c.bottleneck_channels = 8;
  c.gir_enabled = gir;
  return c;
}

// Copies every same-named tensor of `from` into `to`.
template <typename T>
void copy_shared(const Model<T>& from, Model<T>& to) {
  for (const auto& p : to.store().entries()) {
    if (!from.store().contains(p.name)) continue;
    Tensor<T> dst = p.value;
    dst.values() = from.store().at(p.name).value.values();
  }
}

}  // namespace

TEST(ResidualBlock, ZeroConvsGiveRelu) {
  ParameterStore<double> store;
  auto block = detail::make_block(store, "b", 3, 3, 2, 3);
  std::mt19937_64 rng(1);
  auto x = random_tensor({1, 3, 4, 4, 4}, rng);
  auto y = residual_block(x, block, Mode::infer);
  // Infer-mode BN with unit running variance scales by 1/sqrt(1 + eps); zero weights make that moot.
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.values()[i], std::max(0.0, x.values()[i]));
}

TEST(ResidualBlock, ShapeAndShortcut) {
  ParameterStore<float> store;
  auto same = detail::make_block(store, "a", 16, 16, 2, 3);
  EXPECT_FALSE(same.shortcut.has_value());
  EXPECT_EQ(residual_block(Tensor<float>::zeros({1, 16, 8, 8, 8}), same, Mode::train).shape(),
            (Shape{1, 16, 8, 8, 8}));
  auto wide = detail::make_block(store, "b", 4, 8, 2, 3);
  EXPECT_TRUE(wide.shortcut.has_value());
  EXPECT_THROW(residual_block(Tensor<float>::zeros({1, 3, 4, 4, 4}), wide, Mode::train), ShapeError);
}

TEST(Model, ShapeContract) {
  Model<float> model{UNetConfig{}};
  model.initialize(0);
  EXPECT_EQ(model.forward(Tensor<float>::zeros({1, 1, 16, 16, 16}), Mode::train).shape(), (Shape{1, 1, 16, 16, 16}));
  Model<float> small{tiny(true)};
  small.initialize(0);
  EXPECT_EQ(small.forward(Tensor<float>::zeros({2, 1, 4, 8, 12}), Mode::train).shape(), (Shape{2, 1, 4, 8, 12}));
}

TEST(Model, IndivisibleExtentIsRejected) {
  Model<float> model{tiny(false)};
  EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 1, 4, 6, 4}), Mode::train), ShapeError);
  EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 2, 4, 4, 4}), Mode::train), ShapeError);
}

TEST(Model, ZeroGirMatchesPlainBackbone) {
  Model<double> with{tiny(true)}, without{tiny(false)};
  with.initialize(3);
  for (auto& p : with.store().entries()) {
    if (!p.name.starts_with("gir.")) continue;
    Tensor<double> t = p.value;
    std::fill(t.values().begin(), t.values().end(), 0.0);
  }
  copy_shared(with, without);
  std::mt19937_64 rng(4);
  auto x = random_tensor({1, 1, 8, 8, 8}, rng);
  EXPECT_EQ(with.forward(x, Mode::infer).values(), without.forward(x, Mode::infer).values());
  EXPECT_EQ(with.forward(x, Mode::train).values(), without.forward(x, Mode::train).values());
}

TEST(Model, GirAfterEncoderLevel) {
  auto cfg = tiny(true);
  cfg.level_channels = {4, 8};
  cfg.gir_level = 1;
  Model<float> model{cfg};
  ASSERT_TRUE(model.gir().has_value());
  EXPECT_EQ(model.gir()->config.c_in, 4u);
  model.initialize(5);
  EXPECT_EQ(model.forward(Tensor<float>::full({1, 1, 4, 4, 4}, 0.5f), Mode::train).shape(), (Shape{1, 1, 4, 4, 4}));
  cfg.gir_level = 3;
  EXPECT_THROW(Model<float>{cfg}, std::invalid_argument);
}

TEST(Model, DeterministicForward) {
  Model<float> a{tiny(true)}, b{tiny(true)};
  a.initialize(6);
  b.initialize(6);
  auto x = Tensor<float>::full({1, 1, 8, 8, 8}, 0.25f);
  x.values()[17] = 1.0f;
  EXPECT_EQ(a.forward(x, Mode::infer).values(), b.forward(x, Mode::infer).values());
  EXPECT_EQ(a.forward(x, Mode::infer).values(), a.forward(x, Mode::infer).values());
}

TEST(Model, TinyGradcheck) {
  Model<double> model{tiny(true)};
  model.initialize(7);
  std::mt19937_64 rng(8);
  auto x = random_tensor({1, 1, 4, 4, 4}, rng);
  GradcheckOptions opts;
  opts.max_entries = 6;
  auto report = gradcheck(
      "backbone", [&model](const std::vector<Tensor<double>>& in) { return model.forward(in[0], Mode::train); }, {x},
      opts);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Params, DefaultCounts) {
  UNetConfig plain;
  plain.gir_enabled = false;
  const std::size_t without = count_params(Model<float>{plain});
  const std::size_t with = count_params(Model<float>{UNetConfig{}});
  EXPECT_GE(without, 1190000u);
  EXPECT_LE(without, 1610000u);
  EXPECT_EQ(without, 1423841u);
  EXPECT_EQ(with - without, gir_param_count(GirConfig::defaults(128)));
  const double overhead = double(with) / double(without) - 1.0;
  EXPECT_GE(overhead, 0.01);
  EXPECT_LE(overhead, 0.05);
}

TEST(Params, HeadHasSeventeen) {
  ParameterStore<float> store;
  detail::make_conv(store, "head", 16, 1, 1);
  EXPECT_EQ(store.count_parameters(), 17u);
}

TEST(Params, NamingScheme) {
  Model<float> model{UNetConfig{}};
  for (const char* name : {"encoder.level1.conv1.weight", "bottleneck.bn2.running_var", "gir.adjacency",
                           "decoder.level3.up.weight", "head.bias"}) {
    EXPECT_TRUE(model.store().contains(name)) << name;
  }
}
