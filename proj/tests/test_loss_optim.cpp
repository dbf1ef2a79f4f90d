#include <gtest/gtest.h>

#include <cmath>

#include "cpose/adam.hpp"
#include "cpose/loss.hpp"
#include "cpose/rng.hpp"

using namespace cpose;

namespace {

using Tops = std::vector<std::pair<Tensor<double>, double>>;

Pose random_pose(Rng& rng) {
  Pose p;
  for (double& c : p.translation) c = rng.uniform(-3, 3);
  p.rotation = canonicalize({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
  return p;
}

ParameterStore<double> one_weight(double w) {
  ParameterStore<double> s;
  s.add("w", Tensor<double>::scalar(w));
  return s;
}

GradientMap<double> one_grad(double g) {
  GradientMap<double> m;
  m.emplace("w", Tensor<double>::scalar(g));
  return m;
}

}  // namespace

TEST(PoseLoss, HandCases) {
  const PoseLossSpec spec;
  const Pose target{{1, 2, 3}, from_euler_xyz({0.1, 0.2, 0.3})};
  EXPECT_EQ(pose_loss(target, target, spec), 0.0);

  Pose shifted = target;
  shifted.translation[0] += 1.0;
  EXPECT_NEAR(pose_loss(shifted, target, {7.0}), 1.0, 1e-12);

  // Translation residual (3,4,0), quaternion residual of norm 0.1.
  const Pose a{{3, 4, 0}, {1, 0, 0, 0}}, b{{0, 0, 0}, {1, 0, 0, 0}};
  const double loss_t = translation_error(a, b);
  Pose c = a;
  c.rotation = {1, 0, 0, 0};
  Pose d = b;
  d.rotation = {1, 0.1, 0, 0};  // not unit, but the residual norm is exactly 0.1
  EXPECT_NEAR(loss_t + 250.0 * rotation_error(c, d), 30.0, 1e-12);
  EXPECT_NEAR(pose_loss(c, d, {250.0}), 30.0, 1e-12);
}

TEST(PoseLoss, NonNegativeZeroOnlyOnMatchAndMonotoneInBeta) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const Pose p = random_pose(rng), q = random_pose(rng);
    EXPECT_GT(pose_loss(p, q, {}), 0.0);
    EXPECT_EQ(pose_loss(p, p, {}), 0.0);
    EXPECT_LT(pose_loss(p, q, {10.0}), pose_loss(p, q, {20.0}));
  }
  EXPECT_THROW(pose_loss(Pose{}, Pose{}, {0.0}), std::invalid_argument);
}

TEST(PoseLoss, GraphFormMatchesScalarForm) {
  Rng rng(2);
  std::vector<Pose> preds, targets;
  for (int i = 0; i < 5; ++i) {
    preds.push_back(random_pose(rng));
    targets.push_back(random_pose(rng));
  }
  Graph<double> g;
  Tensor<double> raw = pose_targets<double>(preds);
  for (std::size_t i = 0; i < 5; ++i)  // unnormalized raw quaternion
    for (std::size_t c = 3; c < 7; ++c) raw[7 * i + c] *= 2.5;
  const NodeId raw_id = g.input(raw), tgt = g.input(pose_targets<double>(targets));
  const PoseLossNodes n = pose_loss(g, raw_id, tgt, {250.0});
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(g.value(n.total)[i], pose_loss(preds[i], targets[i], {250.0}), 1e-9);
  }
}

TEST(Aggregate, Examples) {
  EXPECT_EQ(aggregate_weighted_loss(Tops{}), 0.0);
  EXPECT_EQ(aggregate_weighted_loss(Tops{{Tensor<double>::scalar(2.0), 1.0}}), 2.0);
  EXPECT_EQ(aggregate_weighted_loss(Tops{{Tensor<double>::scalar(2.0), 1.0}, {Tensor<double>::scalar(3.0), 0.5}}), 3.5);
  const Tensor<double> v(Shape{3}, std::vector<double>{1, 2, 3});
  EXPECT_EQ(aggregate_weighted_loss(Tops{{v, 2.0}}), 12.0);
}

TEST(Aggregate, LinearInEachWeight) {
  Rng rng(6);
  Tensor<double> a(Shape{4}), b(Shape{2, 3});
  for (double& x : a.data()) x = rng.uniform(-1, 1);
  for (double& x : b.data()) x = rng.uniform(-1, 1);
  const auto f = [&](double wa, double wb) { return aggregate_weighted_loss(Tops{{a, wa}, {b, wb}}); };
  for (int i = 0; i < 20; ++i) {
    const double w1 = rng.uniform(-2, 2), w2 = rng.uniform(-2, 2), wb = rng.uniform(-2, 2), k = rng.uniform(-3, 3);
    EXPECT_NEAR(f(w1 + w2, wb) - f(0, wb), (f(w1, wb) - f(0, wb)) + (f(w2, wb) - f(0, wb)), 1e-12);
    EXPECT_NEAR(f(k * w1, 0), k * f(w1, 0), 1e-12);
  }
  Graph<double> g;
  const NodeId na = g.input(a), nb = g.input(b);
  EXPECT_NEAR(g.value(aggregate_weighted_loss(g, {{na, 0.5}, {nb, 2.0}})).item(), f(0.5, 2.0), 1e-12);
}

TEST(Adam, SingleStepHandCase) {
  auto params = one_weight(1.0);
  AdamState<double> s;
  adam_step(s, params, one_grad(0.5));
  EXPECT_EQ(s.t, 1u);
  EXPECT_NEAR(s.m.at("w").item(), 0.05, 1e-15);
  EXPECT_NEAR(s.v.at("w").item(), 0.00025, 1e-15);
  // alpha * sqrt(1 - b2) / (1 - b1) * m / (sqrt(v) + eps), with sqrt(v) = 0.0158113883...
  EXPECT_NEAR(params.at("w").value.item(), 0.9990, 1e-6);
  EXPECT_NEAR(params.at("w").value.item(), 1.0 - 0.001 * 0.0158113883 / (0.0158113883 + 1e-8), 1e-12);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  auto params = one_weight(0.7);
  AdamState<double> s;
  for (int i = 0; i < 5; ++i) adam_step(s, params, one_grad(0.0));
  EXPECT_EQ(params.at("w").value.item(), 0.7);
  EXPECT_EQ(s.t, 5u);
}

TEST(Adam, ConstantGradientUpdatesStayBelowAlpha) {
  for (double g : {0.5, -3.0, 1e-3}) {
    auto params = one_weight(0.0);
    AdamState<double> s;
    double prev = 0.0;
    for (int step = 1; step <= 1000; ++step) {
      adam_step(s, params, one_grad(g));
      const double w = params.at("w").value.item();
      const double update = std::abs(w - prev);
      prev = w;
      EXPECT_LE(update, s.alpha * (1 + 1e-6)) << "step " << step;
      EXPECT_GE(s.v.at("w").item(), 0.0);
    }
    EXPECT_EQ(prev < 0, g > 0);
  }
}

TEST(Adam, MultiplierZeroFreezesButUpdatesMoments) {
  auto params = one_weight(0.25);
  AdamState<double> s;
  const std::map<std::string, double> mults{{"w", 0.0}};
  adam_step(s, params, one_grad(2.0), &mults);
  EXPECT_EQ(params.at("w").value.item(), 0.25);
  EXPECT_NEAR(s.m.at("w").item(), 0.2, 1e-15);
}

TEST(Adam, MissingMultiplierDefaultsToOne) {
  auto a = one_weight(1.0), b = one_weight(1.0);
  AdamState<double> sa, sb;
  const std::map<std::string, double> none;
  adam_step(sa, a, one_grad(0.5), &none);
  adam_step(sb, b, one_grad(0.5));
  EXPECT_EQ(a.at("w").value.item(), b.at("w").value.item());
}

TEST(Adam, NonFiniteGradientNamesParameterAndModifiesNothing) {
  auto params = one_weight(1.0);
  AdamState<double> s;
  try {
    adam_step(s, params, one_grad(std::nan("")));
    FAIL() << "expected NonFiniteGradient";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.parameter, "w");
  }
  EXPECT_EQ(s.t, 0u);
  EXPECT_EQ(params.at("w").value.item(), 1.0);
  EXPECT_THROW(adam_step(s, params, one_grad(INFINITY)), NonFiniteGradient);
}

TEST(SelectBeta, Examples) {
  EXPECT_DOUBLE_EQ(select_beta(6.0, 0.02), 300.0);
  EXPECT_EQ(select_beta(1.0, 1.0), 1.0);
  EXPECT_NEAR(select_beta(0.18, 0.0012), 150.0, 1e-9);
  EXPECT_THROW(select_beta(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(select_beta(1.0, -1.0), std::invalid_argument);
}
