#pragma once

// Randomized finite-difference sweep over every differentiable operator used
// by the pose network. Shared by the `gradcheck` CLI and the test suites.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cpose/gradcheck.hpp"
#include "cpose/loss.hpp"
#include "cpose/ops.hpp"
#include "cpose/rng.hpp"

namespace cpose {

struct OperatorCheck {
  std::string name;
  bool smooth;  // no kinks anywhere in the sampled domain
  std::size_t instances = 0;
  double max_relative_error = 0.0;
  /// Overrides the smooth/kinked default when set.
  std::optional<double> limit;
  double threshold() const { return limit ? *limit : smooth ? 1e-6 : 1e-4; }
  bool passed() const { return max_relative_error < threshold(); }
};

namespace detail {

/// Values in [lo, hi] whose magnitude is at least `gap` and whose pairwise
/// distance is at least `gap`, so max/relu kinks stay out of reach of the
/// finite-difference step.
template <typename T>
Tensor<T> separated_values(Rng& rng, Shape shape, double lo, double hi, double gap) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> grid;
  for (double v = lo; v <= hi + 1e-12; v += 2.0 * gap)
    if (std::abs(v) >= gap) grid.push_back(v);
  if (grid.size() < n) throw std::logic_error("separated_values: range too small");
  rng.shuffle(grid);
  AlignedVector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(grid[i] + rng.uniform(-0.25, 0.25) * gap);
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Random sign, magnitude in [0.1, 1].
template <typename T>
Tensor<T> signed_tensor(Rng& rng, Shape shape) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(0.1, 1.0) * (rng.below(2) ? 1.0 : -1.0));
  return t;
}

/// loss = sum(y * R) for a fixed random projection R, so every output
/// element contributes with a distinct weight. |R| >= 0.1 keeps gradient
/// elements away from zero, where a relative-error metric measures only
/// rounding noise.
template <typename T>
NodeId project(Graph<T>& g, NodeId y, Rng& rng, bool positive = false) {
  const NodeId r = g.input(positive ? uniform_tensor<T>(rng, g.value(y).shape(), 0.1, 1.0)
                                    : signed_tensor<T>(rng, g.value(y).shape()),
                           "projection");
  return ops::sum(g, ops::mul(g, y, r));
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace detail

/// Builds one random instance of an operator into (store, graph) and returns
/// the scalar loss node.
template <typename T>
using InstanceBuilder = std::function<NodeId(Graph<T>&, ParameterStore<T>&, Rng&)>;

template <typename T>
std::vector<std::pair<OperatorCheck, InstanceBuilder<T>>> operator_suite() {
  using detail::pick;
  using detail::project;
  using detail::separated_values;
  using detail::uniform_tensor;
  std::vector<std::pair<OperatorCheck, InstanceBuilder<T>>> suite;

  suite.push_back({{"conv2d", true}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, std::max<std::size_t>(k, 2), 5), w = pick(rng, std::max<std::size_t>(k, 2), 5);
    // Positive operands: weight gradients are sums of products, which could
    // otherwise cancel to near zero.
    s.add("x", uniform_tensor<T>(rng, {n, cin, h, w}, 0.1, 1));
    s.add("kernel", uniform_tensor<T>(rng, {cout, cin, k, k}, 0.1, 1));
    s.add("bias", uniform_tensor<T>(rng, {cout}, -1, 1));
    const NodeId y = ops::conv2d(g, g.parameter("x"), g.parameter("kernel"), g.parameter("bias"), stride, pad);
    return project(g, y, rng, true);
  }});

  suite.push_back({{"maxpool2d", false}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t c = pick(rng, 1, 2), window = pick(rng, 2, 3), stride = pick(rng, 1, 2);
    const std::size_t pad = pick(rng, 0, 1), h = pick(rng, window, 5), w = pick(rng, window, 5);
    s.add("x", separated_values<T>(rng, {c, h, w}, -2.0, 2.0, 0.02));
    return project(g, ops::maxpool2d(g, g.parameter("x"), window, stride, pad), rng);
  }});

  suite.push_back({{"avgpool2d", true}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t c = pick(rng, 1, 2), window = pick(rng, 1, 3), stride = pick(rng, 1, 2);
    const std::size_t h = pick(rng, window, 5), w = pick(rng, window, 5);
    s.add("x", uniform_tensor<T>(rng, {1, c, h, w}, -1, 1));
    return project(g, ops::avgpool2d(g, g.parameter("x"), window, stride), rng, true);
  }});

  suite.push_back({{"relu", false}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t n = pick(rng, 1, 12);
    s.add("x", separated_values<T>(rng, {n}, -1.0, 1.0, 0.02));
    return project(g, ops::relu(g, g.parameter("x")), rng);
  }});

  suite.push_back({{"lrn", true}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    kernels::LrnParams p;
    p.local_size = 2 * pick(rng, 0, 2) + 1;
    p.alpha = rng.uniform(0.1, 1.0);
    p.beta = rng.uniform(0.5, 1.0);
    p.k = rng.uniform(1.0, 2.0);
    const std::size_t c = pick(rng, 1, 6);
    s.add("x", uniform_tensor<T>(rng, {c, pick(rng, 1, 3), pick(rng, 1, 3)}, -1.5, 1.5));
    return project(g, ops::lrn(g, g.parameter("x"), p), rng);
  }});

  suite.push_back({{"concat_channels", true}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t parts = pick(rng, 1, 4), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
    std::vector<NodeId> xs;
    for (std::size_t i = 0; i < parts; ++i) {
      const std::string name = "x" + std::to_string(i);
      s.add(name, uniform_tensor<T>(rng, {2, pick(rng, 1, 3), h, w}, -1, 1));
      xs.push_back(g.parameter(name));
    }
    return project(g, ops::concat_channels(g, xs), rng);
  }});

  suite.push_back({{"linear", true}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t n = pick(rng, 1, 3), din = pick(rng, 1, 6), dout = pick(rng, 1, 5);
    s.add("x", uniform_tensor<T>(rng, {n, din}, 0.1, 1));
    s.add("weight", uniform_tensor<T>(rng, {dout, din}, 0.1, 1));
    s.add("bias", uniform_tensor<T>(rng, {dout}, -1, 1));
    return project(g, ops::linear(g, g.parameter("x"), g.parameter("weight"), g.parameter("bias")), rng, true);
  }});

  suite.push_back({{"l2_norm", true}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t rows = pick(rng, 1, 3), d = pick(rng, 1, 6);
    Tensor<T> x = uniform_tensor<T>(rng, {rows, d}, -1, 1);
    // keep every row norm >= 0.1
    for (std::size_t r = 0; r < rows; ++r) x[r * d] = static_cast<T>(rng.uniform(0.1, 1.0) * (rng.below(2) ? 1 : -1));
    s.add("x", std::move(x));
    return project(g, ops::l2_norm(g, g.parameter("x")), rng);
  }});

  suite.push_back({{"pose_loss", false}, [](Graph<T>& g, ParameterStore<T>& s, Rng& rng) {
    const std::size_t n = pick(rng, 1, 4);
    Tensor<T> raw = uniform_tensor<T>(rng, {n, 7}, -3, 3);
    std::vector<Pose> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
      // raw w at least 0.2 from the sign flip
      raw[7 * i + 3] = static_cast<T>(rng.uniform(0.2, 2.0) * (rng.below(2) ? 1 : -1));
      for (auto& c : targets[i].translation) c = rng.uniform(-3, 3);
      targets[i].rotation = canonicalize({rng.uniform(0.2, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    s.add("raw", std::move(raw));
    PoseLossSpec spec;
    spec.beta = rng.uniform(0.5, 10.0);
    const NodeId tgt = g.input(pose_targets<T>(targets), "targets");
    const PoseLossNodes nodes = pose_loss(g, g.parameter("raw"), tgt, spec);
    return aggregate_weighted_loss(g, {{nodes.total, 1.0}});
  }});

  return suite;
}

/// Runs `instances` random cases of every operator.
template <typename T>
std::vector<OperatorCheck> run_gradient_suite(std::size_t instances, std::uint64_t seed,
                                              double epsilon = 1e-5) {
  std::vector<OperatorCheck> results;
  for (auto& [check, build] : operator_suite<T>()) {
    Rng rng(keyed_seed(seed, {string_key(check.name)}));
    for (std::size_t i = 0; i < instances; ++i) {
      ParameterStore<T> store;
      Graph<T> g(&store);
      const NodeId loss = build(g, store, rng);
      check.max_relative_error = std::max(check.max_relative_error, finite_diff_check_all(g, loss, epsilon));
      ++check.instances;
    }
    results.push_back(check);
  }
  return results;
}

/// Single-precision check. Central differences in float are dominated by
/// rounding in the forward pass, so instead each float instance is compared
/// with its double twin: both are built from the same draws, the float one
/// holding the rounded values. The error per instance is the largest
/// ||g_float - g_double||_inf / ||g_double||_inf over parameters. The double
/// gradients are the ones validated by run_gradient_suite.
inline std::vector<OperatorCheck> run_precision_suite(std::size_t instances, std::uint64_t seed,
                                                      double limit = 1e-5) {
  auto wide = operator_suite<double>();
  auto narrow = operator_suite<float>();
  std::vector<OperatorCheck> results;
  for (std::size_t k = 0; k < wide.size(); ++k) {
    OperatorCheck check = wide[k].first;
    check.limit = limit;
    Rng rng64(keyed_seed(seed, {string_key(check.name)}));
    Rng rng32(keyed_seed(seed, {string_key(check.name)}));
    for (std::size_t i = 0; i < instances; ++i) {
      ParameterStore<double> s64;
      ParameterStore<float> s32;
      Graph<double> g64(&s64);
      Graph<float> g32(&s32);
      const NodeId l64 = wide[k].second(g64, s64, rng64);
      const NodeId l32 = narrow[k].second(g32, s32, rng32);
      const GradientMap<double> d64 = g64.backward(l64);
      const GradientMap<float> d32 = g32.backward(l32);
      for (const auto& [name, ref] : d64) {
        const Tensor<float>& got = d32.at(name);
        double diff = 0.0, scale = 1e-30;
        for (std::size_t j = 0; j < ref.numel(); ++j) {
          diff = std::max(diff, std::abs(static_cast<double>(got[j]) - ref[j]));
          scale = std::max(scale, std::abs(ref[j]));
        }
        check.max_relative_error = std::max(check.max_relative_error, diff / scale);
      }
      ++check.instances;
    }
    results.push_back(check);
  }
  return results;
}

}  // namespace cpose
