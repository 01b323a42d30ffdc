#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "neurogir/gradcheck.hpp"
#include "neurogir/losses.hpp"

using namespace neurogir;

namespace {

Tensor<double> grid(std::size_t n) { return Tensor<double>::zeros({1, 1, n, n, n}); }

double& at(Tensor<double>& t, std::size_t z, std::size_t y, std::size_t x) {
  const std::size_t n = t.dim(4);
  return t.values()[(z * t.dim(3) + y) * n + x];
}

double mass(const Tensor<double>& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

}  // namespace

TEST(SoftSkeleton, LineIsPreservedExactly) {
  auto line = grid(7);
  for (std::size_t x = 1; x < 6; ++x) at(line, 3, 3, x) = 1.0;
  EXPECT_EQ(soft_skeleton(line, 5).values(), line.values());
  // Idempotent on a one-voxel tube.
  EXPECT_EQ(soft_skeleton(soft_skeleton(line, 5), 5).values(), line.values());
}

TEST(SoftSkeleton, ZeroStaysZero) {
  for (double v : soft_skeleton(grid(5), 3).values()) EXPECT_EQ(v, 0.0);
}

TEST(SoftSkeleton, CubeIsThinned) {
  auto cube = grid(9);
  for (std::size_t z = 2; z < 7; ++z)
    for (std::size_t y = 2; y < 7; ++y)
      for (std::size_t x = 2; x < 7; ++x) at(cube, z, y, x) = 1.0;
  const auto skel = soft_skeleton(cube, 2);
  EXPECT_LT(mass(skel), 125.0);
  EXPECT_GT(mass(skel), 0.0);
}

TEST(SoftSkeleton, StaysInUnitRange) {
  std::mt19937_64 rng(1);
  auto skel = soft_skeleton(random_tensor({2, 1, 6, 6, 6}, rng, 0.0, 1.0), 5);
  for (double v : skel.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(soft_skeleton(Tensor<double>::full({1, 1, 3, 3, 3}, 1.5), 1), std::invalid_argument);
}

TEST(SkeletonLoss, IdenticalSkeletons) {
  auto s = grid(5);
  for (std::size_t i : {3u, 17u, 40u, 99u}) s.values()[i] = 1.0;
  EXPECT_NEAR(skeleton_loss_from_skeletons(s, s, 1.0).item(), 0.0, 1e-9);
}

TEST(SkeletonLoss, EmptyPredictionAgainstNineVoxels) {
  auto label = grid(5);
  for (std::size_t i = 0; i < 9; ++i) label.values()[i * 7] = 1.0;
  EXPECT_NEAR(skeleton_loss_from_skeletons(grid(5), label, 1.0).item(), 0.8181818181818181, 1e-12);
}

TEST(SkeletonLoss, BothEmpty) { EXPECT_EQ(skeleton_loss_from_skeletons(grid(3), grid(3), 1.0).item(), 0.0); }

TEST(SkeletonLoss, BoundedAndBatchAveraged) {
  std::mt19937_64 rng(2);
  LossConfig cfg;
  auto p = random_tensor({2, 1, 6, 6, 6}, rng, 0.0, 1.0);
  auto l = random_tensor({2, 1, 6, 6, 6}, rng, 0.0, 1.0);
  for (double& v : l.values()) v = v > 0.7 ? 1.0 : 0.0;
  const double both = skeleton_loss(p, l, cfg).item();
  EXPECT_GE(both, 0.0);
  EXPECT_LT(both, 1.0);
  const double first = skeleton_loss(slice(p, 0, 0, 1), slice(l, 0, 0, 1), cfg).item();
  const double second = skeleton_loss(slice(p, 0, 1, 1), slice(l, 0, 1, 1), cfg).item();
  EXPECT_NEAR(both, 0.5 * (first + second), 1e-12);
  EXPECT_THROW(skeleton_loss(p, slice(l, 0, 0, 1), cfg), ShapeError);
}

TEST(Bce, Values) {
  auto one = Tensor<double>::from({1}, {1.0});
  EXPECT_NEAR(bce_loss(Tensor<double>::from({1}, {0.0}), one).item(), std::log(2.0), 1e-15);
  const double tiny = bce_loss(Tensor<double>::from({1}, {20.0}), one).item();
  EXPECT_NEAR(tiny, 2.06115362e-9, 1e-16);
  EXPECT_TRUE(std::isfinite(bce_loss(Tensor<double>::from({1}, {-1000.0}), one).item()));
  auto logits = Tensor<double>::from({4}, {10, -10, 10, -10});
  auto labels = Tensor<double>::from({4}, {1, 0, 1, 0});
  EXPECT_LT(bce_loss(logits, labels).item(), 1e-4);
}

TEST(Progress, FirstBranch) {
  LossConfig cfg;
  const std::size_t e = 7;
  EXPECT_EQ(progress_ratio({0, 300 * e, 300}, cfg), 0.0);
  EXPECT_DOUBLE_EQ(progress_ratio({100 * e, 200 * e, 200}, cfg), 0.5);
  EXPECT_DOUBLE_EQ(progress_ratio({100 * e, 300 * e, 300}, cfg), 0.5);
}

TEST(Progress, SecondBranch) {
  LossConfig cfg;
  const std::size_t e = 5;
  EXPECT_NEAR(progress_ratio({250 * e, 300 * e, 300}, cfg), 2.0 * 250.0 / 300.0, 1e-12);
  EXPECT_NEAR(progress_ratio({250 * e, 300 * e, 300}, cfg), 1.667, 5e-4);
  EXPECT_DOUBLE_EQ(progress_ratio({300 * e, 300 * e, 300}, cfg), 2.0);
  EXPECT_THROW(progress_ratio({1, 0, 1}, cfg), std::invalid_argument);
}

TEST(Alpha, Identities) {
  EXPECT_EQ(alpha(0.0), 0.0);
  for (int k = 0; k <= 40; ++k) {
    const double p = 0.05 * k;
    EXPECT_NEAR(alpha(p), std::tanh(5.0 * p), 1e-12) << p;
    if (k > 0) EXPECT_GT(alpha(p), alpha(0.05 * (k - 1)));
  }
  EXPECT_NEAR(alpha(0.1), 0.462117157260010, 1e-12);
  EXPECT_NEAR(alpha(1.0), 0.9999092, 1e-6);
}

TEST(Compound, BlendArithmetic) {
  const double a = alpha(0.1);
  EXPECT_NEAR(a * 0.6 + (1.0 - a) * 0.4, 0.49242343145200196, 1e-12);
}

TEST(Compound, WeightsComponents) {
  std::mt19937_64 rng(3);
  auto logits = random_tensor({1, 1, 6, 6, 6}, rng, -3.0, 3.0);
  auto label = random_tensor({1, 1, 6, 6, 6}, rng, 0.0, 1.0);
  for (double& v : label.values()) v = v > 0.6 ? 1.0 : 0.0;
  LossConfig cfg;
  const auto zero = compound_loss(logits, label, Progress{0, 100, 10}, cfg);
  EXPECT_EQ(zero.total.item(), zero.skeleton);
  const auto mid = compound_loss(logits, label, 0.3, cfg);
  EXPECT_NEAR(mid.total.item(), 0.3 * mid.ce + 0.7 * mid.skeleton, 1e-12);
  const auto late = compound_loss(logits, label, Progress{300, 300, 300}, cfg);
  EXPECT_NEAR(late.total.item(), late.ce, 1e-8);
  cfg.mode = LossMode::ce_only;
  EXPECT_EQ(compound_loss(logits, label, 0.0, cfg).total.item(), mid.ce);
}

TEST(Compound, Gradcheck) {
  std::mt19937_64 rng(4);
  auto label = random_tensor({1, 1, 6, 6, 6}, rng, 0.0, 1.0);
  for (double& v : label.values()) v = v > 0.6 ? 1.0 : 0.0;
  LossConfig cfg;
  auto report = gradcheck(
      "compound_loss",
      [&](const std::vector<Tensor<double>>& in) { return compound_loss(in[0], label, 0.4, cfg).total; },
      {distinct_tensor({1, 1, 6, 6, 6}, rng, -2.0, 0.017)});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}
