#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "cpose/parameters.hpp"

namespace cpose {

/// Raised for a non-finite gradient; names the parameter.
class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient for parameter " + param), parameter(param) {}
  std::string parameter;
};

/// Moment estimates and step count. beta1/beta2 are the moment decay rates,
/// unrelated to the pose-loss balance.
template <typename T>
struct AdamState {
  std::uint64_t t = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam update over every parameter that has a gradient:
///   m <- b1 m + (1-b1) g
///   v <- b2 v + (1-b2) g^2
///   w <- w - alpha * mult * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps)
/// with t the incremented step. Multipliers come from `lr_multipliers` when
/// given (missing names default to 1), otherwise from the store. A zero
/// multiplier leaves the parameter bitwise unchanged but still advances its
/// moments. Nothing is modified if any gradient is non-finite.
template <typename T>
void adam_step(AdamState<T>& state, ParameterStore<T>& params, const GradientMap<T>& grads,
               const std::map<std::string, double>* lr_multipliers = nullptr) {
  for (const auto& [name, g] : grads) {
    const Parameter<T>& p = params.at(name);
    if (g.shape() != p.value.shape()) {
      throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match parameter " +
                       name + " " + shape_str(p.value.shape()));
    }
    if (!g.all_finite()) throw NonFiniteGradient(name);
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction = std::sqrt(1.0 - std::pow(state.beta2, t)) / (1.0 - std::pow(state.beta1, t));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T eps = static_cast<T>(state.epsilon);
  for (const auto& [name, g] : grads) {
    Parameter<T>& p = params.at(name);
    double mult = p.lr_multiplier;
    if (lr_multipliers) {
      auto it = lr_multipliers->find(name);
      mult = it == lr_multipliers->end() ? 1.0 : it->second;
    }
    Tensor<T>& m = state.m.try_emplace(name, g.shape()).first->second;
    Tensor<T>& v = state.v.try_emplace(name, g.shape()).first->second;
    const T step = static_cast<T>(state.alpha * mult * correction);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      if (mult != 0.0) p.value[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
}

}  // namespace cpose
