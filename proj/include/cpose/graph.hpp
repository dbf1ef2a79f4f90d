#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpose/parameters.hpp"
#include "cpose/tensor.hpp"

namespace cpose {

using NodeId = std::size_t;

/// Static computation graph recorded eagerly: each op node computes its value
/// when added and keeps its forward/backward functions so the whole graph can
/// be re-evaluated after inputs or parameters change. Nodes are stored in
/// topological order by construction.
template <typename T>
class Graph {
 public:
  using Inputs = std::vector<const Tensor<T>*>;
  using ForwardFn = std::function<Tensor<T>(const Inputs&)>;
  /// Returns one gradient per input; entries for inputs with needs[i] == false
  /// may be left empty.
  using BackwardFn = std::function<std::vector<std::optional<Tensor<T>>>(
      const Inputs& inputs, const Tensor<T>& output, const Tensor<T>& grad_output,
      const std::vector<bool>& needs)>;

  enum class NodeKind { input, parameter, op };

  struct Node {
    NodeKind kind;
    std::string label;
    std::vector<NodeId> inputs;
    std::optional<Tensor<T>> value;
    std::string param_name;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  explicit Graph(ParameterStore<T>* params = nullptr) : params_(params) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId input(Tensor<T> value, std::string label = "input", bool requires_grad = false) {
    Node n{NodeKind::input, std::move(label), {}, std::move(value), {}, requires_grad, {}, {}};
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  /// Leaf bound to a named tensor in the attached parameter store.
  NodeId parameter(const std::string& name) {
    if (!params_) throw std::logic_error("graph has no parameter store attached");
    params_->at(name);
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
    Node n{NodeKind::parameter, name, {}, std::nullopt, name, true, {}, {}};
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(name, nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  NodeId op(std::string label, std::vector<NodeId> inputs, ForwardFn forward,
            BackwardFn backward) {
    bool rg = false;
    for (NodeId i : inputs) {
      if (i >= nodes_.size()) throw std::out_of_range("graph op input refers to a later node");
      rg = rg || nodes_[i].requires_grad;
    }
    Node n{NodeKind::op, std::move(label), std::move(inputs), std::nullopt, {}, rg,
           std::move(forward), std::move(backward)};
    n.value = n.forward(gather(n.inputs));
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.kind == NodeKind::parameter) return params_->at(n.param_name).value;
    if (!n.value) {
      throw std::logic_error("node " + std::to_string(id) + " (" + n.label +
                             ") has no forward value");
    }
    return *n.value;
  }

  void set_input(NodeId id, Tensor<T> v) {
    Node& n = nodes_.at(id);
    if (n.kind != NodeKind::input) throw std::logic_error("set_input on non-input node");
    n.value = std::move(v);
  }

  /// Re-evaluates every op node in topological order.
  void forward() {
    for (Node& n : nodes_) {
      if (n.kind == NodeKind::op) n.value = n.forward(gather(n.inputs));
    }
  }

  /// Drops cached op values; backward() then fails until forward() runs.
  void release_values() {
    for (Node& n : nodes_)
      if (n.kind == NodeKind::op) n.value.reset();
  }

  /// Reverse-mode sweep from a scalar node. With a parameter store attached,
  /// the result holds one entry for every stored parameter (zero when the
  /// parameter does not influence the loss).
  GradientMap<T> backward(NodeId loss) {
    const Tensor<T>& lv = value(loss);
    if (lv.numel() != 1) {
      throw ShapeError("backward: loss node must be scalar, got shape " + shape_str(lv.shape()));
    }
    for (std::size_t i = 0; i <= loss; ++i) {
      if (nodes_[i].kind == NodeKind::op && !nodes_[i].value) {
        throw std::logic_error("backward: node " + std::to_string(i) + " (" + nodes_[i].label +
                               ") is missing its forward value");
      }
    }
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss] = Tensor<T>(lv.shape(), T(1));
    for (std::size_t k = loss + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.kind != NodeKind::op || !grads_[k] || !n.requires_grad) continue;
      std::vector<bool> needs(n.inputs.size());
      for (std::size_t i = 0; i < n.inputs.size(); ++i) needs[i] = nodes_[n.inputs[i]].requires_grad;
      auto in_grads = n.backward(gather(n.inputs), *n.value, *grads_[k], needs);
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        if (!needs[i] || !in_grads[i]) continue;
        accumulate(n.inputs[i], std::move(*in_grads[i]));
      }
    }
    GradientMap<T> out;
    if (params_) {
      for (const auto& p : params_->entries()) {
        auto it = param_nodes_.find(p.name);
        if (it != param_nodes_.end() && grads_[it->second]) {
          out.emplace(p.name, *grads_[it->second]);
        } else {
          out.emplace(p.name, Tensor<T>(p.value.shape()));
        }
      }
    }
    return out;
  }

  /// Gradient of the last backward() with respect to a node, if any reached it.
  const Tensor<T>* grad(NodeId id) const {
    if (id >= grads_.size() || !grads_[id]) return nullptr;
    return &*grads_[id];
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  ParameterStore<T>* parameters() const noexcept { return params_; }

 private:
  Inputs gather(const std::vector<NodeId>& ids) const {
    Inputs out;
    out.reserve(ids.size());
    for (NodeId i : ids) out.push_back(&value(i));
    return out;
  }

  void accumulate(NodeId id, Tensor<T> g) {
    if (!grads_[id]) {
      grads_[id] = std::move(g);
      return;
    }
    Tensor<T>& acc = *grads_[id];
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
  }

  ParameterStore<T>* params_;
  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
};

}  // namespace cpose
