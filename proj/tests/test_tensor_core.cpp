#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "neurogir/batchnorm.hpp"
#include "neurogir/conv.hpp"
#include "neurogir/gradcheck.hpp"
#include "neurogir/optim.hpp"
#include "neurogir/pool.hpp"

using namespace neurogir;

namespace {

Tensor<double> impulse5() {
  auto x = Tensor<double>::zeros({1, 1, 5, 5, 5});
  x.values()[(2 * 5 + 2) * 5 + 2] = 1.0;
  return x;
}

bool in_center_cube(std::size_t i) {
  const std::size_t z = i / 25, y = i / 5 % 5, x = i % 5;
  return z >= 1 && z <= 3 && y >= 1 && y <= 3 && x >= 1 && x <= 3;
}

// Direct nested-loop convolution, stride 1.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t od = D + 2 * pad - K + 1, oh = H + 2 * pad - K + 1, ow = W + 2 * pad - K + 1;
  std::vector<double> out(B * O * od * oh * ow);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            double acc = b.values()[o];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < K; ++a)
                for (std::size_t bb = 0; bb < K; ++bb)
                  for (std::size_t e = 0; e < K; ++e) {
                    const auto iz = std::ptrdiff_t(z + a) - std::ptrdiff_t(pad);
                    const auto iy = std::ptrdiff_t(y + bb) - std::ptrdiff_t(pad);
                    const auto ix = std::ptrdiff_t(xx + e) - std::ptrdiff_t(pad);
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= std::ptrdiff_t(D) || iy >= std::ptrdiff_t(H) ||
                        ix >= std::ptrdiff_t(W))
                      continue;
                    acc += w.values()[(((o * C + c) * K + a) * K + bb) * K + e] *
                           x.values()[(((n * C + c) * D + std::size_t(iz)) * H + std::size_t(iy)) * W + std::size_t(ix)];
                  }
            out[(((n * O + o) * od + z) * oh + y) * ow + xx] = acc;
          }
  return out;
}

}  // namespace

TEST(Conv3d, IdentityKernel) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 1, 3, 4, 5}, rng);
  auto y = conv3d(x, Tensor<double>::full({1, 1, 1, 1, 1}, 1.0), Tensor<double>::zeros({1}));
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv3d, ImpulseSpreadsOverNeighborhood) {
  auto y = conv3d(impulse5(), Tensor<double>::full({1, 1, 3, 3, 3}, 1.0), Tensor<double>::zeros({1}), {1, 1, 1},
                  {1, 1, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5, 5}));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.values()[i], in_center_cube(i) ? 1.0 : 0.0) << i;
}

TEST(Conv3d, BiasOnly) {
  std::mt19937_64 rng(2);
  auto y = conv3d(random_tensor({1, 2, 4, 4, 4}, rng), Tensor<double>::zeros({3, 2, 3, 3, 3}),
                  Tensor<double>::full({3}, 0.25));
  ASSERT_EQ(y.shape(), (Shape{1, 3, 2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 0.25);
}

TEST(Conv3d, MatchesNaiveLoops) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 6, 5, 7}, rng);
  auto w = random_tensor({4, 3, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  for (std::size_t pad : {0u, 1u}) {
    auto y = conv3d(x, w, b, {1, 1, 1}, {pad, pad, pad});
    auto ref = naive_conv(x, w, b, pad);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.values()[i], ref[i], 1e-12);
  }
}

TEST(Conv3d, StrideShape) {
  auto y = conv3d(Tensor<float>::zeros({1, 1, 7, 8, 9}), Tensor<float>::zeros({2, 1, 3, 3, 3}), Tensor<float>(),
                  {2, 2, 2}, {1, 1, 1});
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 4, 5}));
}

TEST(Conv3d, ChannelMismatchNamesAxis) {
  try {
    conv3d(Tensor<float>::zeros({1, 2, 4, 4, 4}), Tensor<float>::zeros({1, 3, 3, 3, 3}), Tensor<float>());
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(Conv3d, KernelLargerThanInput) {
  EXPECT_THROW(conv3d(Tensor<float>::zeros({1, 1, 2, 4, 4}), Tensor<float>::zeros({1, 1, 3, 3, 3}), Tensor<float>()),
               ShapeError);
}

TEST(UnitConv, Identity) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({6, 3}, rng);
  std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  auto y = unit_conv(x, Tensor<double>::from({3, 3}, eye), Tensor<double>::zeros({3}));
  EXPECT_EQ(y.values(), x.values());
}

TEST(UnitConv, HandProduct) {
  auto y = unit_conv(Tensor<double>::from({1, 2}, {1, 2}), Tensor<double>::from({2, 2}, {1, 1, 2, 0}),
                     Tensor<double>::from({2}, {0, 1}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 3}));
}

TEST(UnitConv, AgreesWithPointwiseConv3d) {
  std::mt19937_64 rng(5);
  auto grid = random_tensor({1, 3, 2, 3, 4}, rng);
  auto w = random_tensor({5, 3}, rng);
  auto b = random_tensor({5}, rng);
  auto via_conv = conv3d(grid, reshape(w, {5, 3, 1, 1, 1}), b);
  auto points = transpose(reshape(grid, {3, 24}));
  auto via_unit = transpose(unit_conv(points, w, b));
  ASSERT_EQ(via_unit.size(), via_conv.size());
  for (std::size_t i = 0; i < via_conv.size(); ++i) EXPECT_NEAR(via_unit.values()[i], via_conv.values()[i], 1e-6);
}

TEST(Pool3d, ConstantVolumeBothModes) {
  auto x = Tensor<float>::full({1, 2, 4, 4, 4}, 0.7f);
  for (auto mode : {PoolMode::max, PoolMode::min}) {
    auto y = pool3d(x, mode);
    EXPECT_EQ(y.values(), x.values());
  }
}

TEST(Pool3d, MaxImpulse) {
  auto y = pool3d(impulse5(), PoolMode::max);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.values()[i], in_center_cube(i) ? 1.0 : 0.0);
}

TEST(Pool3d, MinImpulseIsZero) {
  auto y = pool3d(impulse5(), PoolMode::min);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Pool3d, PaddingNeverWinsMin) {
  // All-positive input: min pooling at the border must not see the padding.
  auto y = pool3d(Tensor<double>::full({1, 1, 3, 3, 3}, 2.0), PoolMode::min);
  for (double v : y.values()) EXPECT_EQ(v, 2.0);
}

TEST(Pool3d, TiesRouteGradientToFirstIndex) {
  auto x = Tensor<double>::full({1, 1, 2, 2, 2}, 1.0).set_requires_grad();
  sum(pool3d(x, PoolMode::max, 2, 2, 0)).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  for (std::size_t i = 1; i < 8; ++i) EXPECT_EQ(x.grad()[i], 0.0);
}

TEST(Pool3d, BadMode) { EXPECT_THROW(parse_pool_mode("avg"), std::invalid_argument); }

TEST(Activations, ReluAndSigmoid) {
  auto r = relu(Tensor<double>::from({2}, {-3, 2}));
  EXPECT_EQ(r.values(), (std::vector<double>{0, 2}));
  EXPECT_EQ(sigmoid(Tensor<double>::scalar(0)).item(), 0.5);
  EXPECT_NEAR(sigmoid(Tensor<double>::scalar(2)).item(), 0.8807970779778823, 1e-15);
  // Large magnitudes stay finite and saturate.
  EXPECT_EQ(sigmoid(Tensor<double>::scalar(-800)).item(), 0.0);
  EXPECT_EQ(sigmoid(Tensor<double>::scalar(800)).item(), 1.0);
}

TEST(BatchNorm, TwoValues) {
  auto x = Tensor<double>::from({2, 1}, {1, 3});
  auto rm = Tensor<double>::zeros({1});
  auto rv = Tensor<double>::full({1}, 1.0);
  auto y = batchnorm3d(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), 0.0, Mode::train, rm, rv);
  EXPECT_EQ(y.values(), (std::vector<double>{-1, 1}));
  // Running statistics: momentum 0.1, unbiased variance 2.
  EXPECT_NEAR(rm.values()[0], 0.2, 1e-15);
  EXPECT_NEAR(rv.values()[0], 0.9 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(6);
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::full({2}, 1.0);
  auto y = batchnorm3d(random_tensor({2, 2, 2, 2, 2}, rng), Tensor<double>::zeros({2}),
                       Tensor<double>::from({2}, {0.5, -0.5}), 1e-5, Mode::train, rm, rv);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y.values()[i], (i / 8) % 2 == 0 ? 0.5 : -0.5);
}

TEST(BatchNorm, InferIdentity) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({1, 3, 2, 2, 2}, rng);
  auto rm = Tensor<double>::zeros({3});
  auto rv = Tensor<double>::full({3}, 1.0);
  auto y = batchnorm3d(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), 1e-5, Mode::infer, rm, rv);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.values()[i], x.values()[i], 1e-5);
  EXPECT_EQ(rm.values(), (std::vector<double>{0, 0, 0}));
}

TEST(Matmul, HandProducts) {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(matmul(eye, b).values(), b.values());
  auto y = matmul(Tensor<double>::from({2, 2}, {1, 2, 3, 4}), Tensor<double>::from({2, 1}, {1, 1}));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.values(), (std::vector<double>{3, 7}));
}

TEST(Matmul, TransposeIdentity) {
  std::mt19937_64 rng(8);
  auto a = random_tensor({4, 5}, rng);
  auto b = random_tensor({5, 3}, rng);
  auto lhs = transpose(matmul(a, b));
  auto rhs = matmul(transpose(b), transpose(a));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.values()[i], rhs.values()[i], 1e-6);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Upsample, NearestAndTransposedBlocks) {
  auto v = Tensor<double>::full({1, 1, 1, 1, 1}, 2.5);
  auto n = upsample2x(v, UpsampleMode::nearest);
  EXPECT_EQ(n.shape(), (Shape{1, 1, 2, 2, 2}));
  for (double x : n.values()) EXPECT_EQ(x, 2.5);
  auto t = upsample2x(v, UpsampleMode::transposed, Tensor<double>::full({1, 1, 2, 2, 2}, 1.0), Tensor<double>::zeros({1}));
  EXPECT_EQ(t.shape(), (Shape{1, 1, 2, 2, 2}));
  for (double x : t.values()) EXPECT_EQ(x, 2.5);
}

TEST(Upsample, ShapeContract) {
  auto x = Tensor<float>::zeros({2, 3, 2, 2, 2});
  EXPECT_EQ(upsample2x(x, UpsampleMode::nearest).shape(), (Shape{2, 3, 4, 4, 4}));
  EXPECT_EQ(upsample2x(x, UpsampleMode::transposed, Tensor<float>::zeros({3, 3, 2, 2, 2}), Tensor<float>::zeros({3}))
                .shape(),
            (Shape{2, 3, 4, 4, 4}));
  EXPECT_THROW(parse_upsample_mode("trilinear"), std::invalid_argument);
}

TEST(Autograd, SumGivesOnes) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({3, 4}, rng).set_requires_grad();
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autograd, ReluGradient) {
  auto x = Tensor<double>::from({2}, {-1, 2}).set_requires_grad();
  sum(relu(x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1}));
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  auto x = Tensor<double>::from({1}, {3}).set_requires_grad();
  auto y = mul(x, x);
  sum(add(y, y)).backward();
  EXPECT_EQ(x.grad()[0], 12.0);
}

TEST(Autograd, SecondBackwardIsAnError) {
  auto x = Tensor<double>::from({1}, {3}).set_requires_grad();
  auto loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), GraphError);
}

TEST(Autograd, NoGradBuildsNoGraph) {
  auto x = Tensor<double>::from({1}, {3}).set_requires_grad();
  NoGradGuard guard;
  auto y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(y.backward(), GraphError);
}

TEST(Autograd, NonFiniteIsRejected) {
  auto zero = Tensor<double>::scalar(0.0);
  EXPECT_THROW(div(Tensor<double>::scalar(1.0), zero), NonFiniteError);
}

TEST(Autograd, DeepChainDoesNotOverflowStack) {
  auto x = Tensor<double>::scalar(1.0).set_requires_grad();
  Tensor<double> y = x;
  for (int i = 0; i < 200000; ++i) y = add_scalar(y, 0.0);
  y.backward();
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Gradcheck, UnitConvOnThreeByFour) {
  std::mt19937_64 rng(10);
  auto report = gradcheck("unit_conv", [](const auto& in) { return unit_conv(in[0], in[1], in[2]); },
                          {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2}, rng)});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Gradcheck, MaxPoolDistinctEntries) {
  std::mt19937_64 rng(11);
  auto report = gradcheck("pool", [](const auto& in) { return pool3d(in[0], PoolMode::max); },
                          {distinct_tensor({1, 1, 4, 4, 4}, rng, 0.0, 0.01)});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.excluded(), 0u);
}

TEST(Gradcheck, ReluAtZeroIsExcluded) {
  auto report = gradcheck("relu", [](const auto& in) { return relu(in[0]); },
                          {Tensor<double>::from({3}, {-0.5, 0.0, 0.7})});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.excluded(), 1u);
  EXPECT_EQ(report.inputs[0].checked, 2u);
}

TEST(Gradcheck, DetectsWrongBackward) {
  // Forward x^2 with a backward that reports x.
  auto bad = [](const std::vector<Tensor<double>>& in) {
    const auto& x = in[0];
    std::vector<double> out;
    for (double v : x.values()) out.push_back(v * v);
    return make_result<double>("bad_square", x.shape(), out, {x}, [](Node<double>& self) {
      auto* g = input_grad(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * self.inputs[0]->data[i];
    });
  };
  std::mt19937_64 rng(12);
  auto report = gradcheck("bad", bad, {random_tensor({5}, rng, 0.5, 1.0)});
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 0.1);
}

TEST(Adam, FirstStep) {
  auto p = Tensor<double>::zeros({1}).set_requires_grad();
  p.mutable_grad()[0] = 1.0;
  std::vector<Tensor<double>> params{p};
  AdamState<double> state;
  adam_step(params, state, AdamConfig{});
  EXPECT_NEAR(p.values()[0], -1e-3, 1e-10);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto p = Tensor<double>::full({3}, 0.4).set_requires_grad();
  p.mutable_grad();
  std::vector<Tensor<double>> params{p};
  AdamState<double> state;
  for (int i = 0; i < 5; ++i) adam_step(params, state, AdamConfig{});
  for (double v : p.values()) EXPECT_EQ(v, 0.4);
}

TEST(Adam, IdenticalParamsIdenticalUpdates) {
  auto a = Tensor<float>::full({4}, 0.3f).set_requires_grad();
  auto b = Tensor<float>::full({4}, 0.3f).set_requires_grad();
  for (auto* t : {&a, &b}) {
    auto g = t->mutable_grad();
    for (std::size_t i = 0; i < 4; ++i) g[i] = float(i) - 1.5f;
  }
  std::vector<Tensor<float>> params{a, b};
  AdamState<float> state;
  adam_step(params, state, AdamConfig{1e-2, 0.9, 0.999, 1e-8, 5e-4});
  EXPECT_EQ(a.values(), b.values());
}

TEST(Adam, RejectsNonPositiveRate) {
  std::vector<Tensor<double>> params{Tensor<double>::zeros({1})};
  AdamState<double> state;
  EXPECT_THROW(adam_step(params, state, AdamConfig{0.0}), std::invalid_argument);
}
