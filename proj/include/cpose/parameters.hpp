#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpose/tensor.hpp"

namespace cpose {

/// A learnable tensor with its transfer-learning rate multiplier.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  double lr_multiplier = 1.0;
};

/// Named learnable tensors in registration order. Names are unique.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, double lr_multiplier = 1.0) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value), lr_multiplier});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }

  std::vector<Parameter<T>>& entries() noexcept { return params_; }
  const std::vector<Parameter<T>>& entries() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

}  // namespace cpose
