#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "cpose/graph.hpp"

namespace cpose {

/// |a - b| / max(|a|, |b|, 1e-8)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares the reverse-mode gradient of a scalar loss node with respect to
/// one stored parameter against central differences
/// (f(w+eps) - f(w-eps)) / 2eps, element by element. Returns the largest
/// relative error. Parameter values are restored afterwards.
template <typename T>
double finite_diff_check(Graph<T>& graph, NodeId loss, const std::string& parameter,
                         double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
  ParameterStore<T>* store = graph.parameters();
  if (!store) throw std::logic_error("finite_diff_check: graph has no parameter store");
  graph.forward();
  const Tensor<T> analytic = graph.backward(loss).at(parameter);
  Tensor<T>& w = store->at(parameter).value;
  const T eps = static_cast<T>(epsilon);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const T saved = w[i];
    w[i] = saved + eps;
    graph.forward();
    const double up = static_cast<double>(graph.value(loss).item());
    w[i] = saved - eps;
    graph.forward();
    const double down = static_cast<double>(graph.value(loss).item());
    w[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    worst = std::max(worst, relative_error(static_cast<double>(analytic[i]), numeric));
  }
  graph.forward();
  return worst;
}

/// Maximum over every parameter in the graph's store; 0 when there are none.
template <typename T>
double finite_diff_check_all(Graph<T>& graph, NodeId loss, double epsilon) {
  double worst = 0.0;
  if (!graph.parameters()) return worst;
  for (const std::string& name : graph.parameters()->names()) {
    worst = std::max(worst, finite_diff_check(graph, loss, name, epsilon));
  }
  return worst;
}

}  // namespace cpose
