#include <gtest/gtest.h>

#include "cpose/gradcheck_suite.hpp"
#include "cpose/ops.hpp"

using namespace cpose;

TEST(Backward, NormGradient) {
  ParameterStore<double> s;
  s.add("w", Tensor<double>::from({2}, {3, 4}));
  Graph<double> g(&s);
  const NodeId loss = ops::l2_norm(g, g.parameter("w"));
  const auto grads = g.backward(loss);
  EXPECT_DOUBLE_EQ(grads.at("w")[0], 0.6);
  EXPECT_DOUBLE_EQ(grads.at("w")[1], 0.8);
}

TEST(Backward, UnusedParameterGetsZero) {
  ParameterStore<double> s;
  s.add("w", Tensor<double>::from({2}, {3, 4}));
  s.add("unused", Tensor<double>::from({3}, {1, 2, 3}));
  Graph<double> g(&s);
  const auto grads = g.backward(ops::l2_norm(g, g.parameter("w")));
  ASSERT_EQ(grads.count("unused"), 1u);
  for (double v : grads.at("unused").data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, Errors) {
  ParameterStore<double> s;
  s.add("w", Tensor<double>::from({2}, {3, 4}));
  Graph<double> g(&s);
  const NodeId y = ops::relu(g, g.parameter("w"));
  EXPECT_THROW(g.backward(y), ShapeError);
  const NodeId loss = ops::sum(g, y);
  g.release_values();
  EXPECT_THROW(g.backward(loss), std::logic_error);
  g.forward();
  EXPECT_NO_THROW(g.backward(loss));
}

TEST(Backward, ConvReluSumMatchesFiniteDifferences) {
  ParameterStore<double> s;
  Rng rng(21);
  Tensor<double> x(Shape{1, 2, 5, 5}), k(Shape{2, 2, 3, 3}), b(Shape{2});
  for (double& v : x.data()) v = rng.uniform(-1, 1);
  for (double& v : k.data()) v = rng.uniform(-1, 1);
  s.add("x", x);
  s.add("kernel", k);
  s.add("bias", b);
  Graph<double> g(&s);
  const NodeId loss = ops::sum(g, ops::relu(g, ops::conv2d(g, g.parameter("x"), g.parameter("kernel"),
                                                           g.parameter("bias"), 1, 1)));
  for (const auto& name : s.names()) EXPECT_LT(finite_diff_check(g, loss, name, 1e-5), 1e-4) << name;
}

TEST(FiniteDiff, ZeroParameterGraph) {
  ParameterStore<double> s;
  Graph<double> g(&s);
  const NodeId loss = ops::sum(g, g.input(Tensor<double>::from({2}, {1, 2})));
  EXPECT_EQ(finite_diff_check_all(g, loss, 1e-5), 0.0);
}

TEST(FiniteDiff, OperatorSuite) {
  for (const auto& r : run_gradient_suite<double>(30, 1234)) {
    EXPECT_TRUE(r.passed()) << r.name << " max relative error " << r.max_relative_error;
  }
}

TEST(FiniteDiff, FloatGradientsTrackDouble) {
  const auto results = run_precision_suite(30, 99);
  EXPECT_EQ(results.size(), 9u);
  for (const auto& r : results) {
    EXPECT_EQ(r.instances, 30u);
    EXPECT_TRUE(r.passed()) << r.name << " max relative error " << r.max_relative_error;
  }
}
