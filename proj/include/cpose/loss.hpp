#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "cpose/graph.hpp"
#include "cpose/ops.hpp"
#include "cpose/pose.hpp"

namespace cpose {

/// Translation/rotation balance of the pose loss.
struct PoseLossSpec {
  double beta = 250.0;
  double norm_stabilizer = kernels::kNormStabilizer;

  void validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("pose loss beta must be positive");
  }
};

/// |t_pred - t| + beta * |q_pred - q| for canonical poses.
inline double pose_loss(const Pose& pred, const Pose& target, const PoseLossSpec& spec) {
  spec.validate();
  return translation_error(pred, target) + spec.beta * rotation_error(pred, target);
}

/// Per-sample loss nodes, each of shape (N).
struct PoseLossNodes {
  NodeId translation;  // |t_pred - t|
  NodeId rotation;     // |q_pred - q|, unweighted
  NodeId total;        // translation + beta * rotation
};

/// Pose loss on raw (N,7) network outputs against (N,7) targets holding
/// canonical quaternions. Differentiable through quaternion normalization.
template <typename T>
PoseLossNodes pose_loss(Graph<T>& g, NodeId raw, NodeId targets, const PoseLossSpec& spec) {
  spec.validate();
  const NodeId t_pred = ops::slice_columns(g, raw, 0, 3);
  const NodeId q_pred = ops::normalize_quaternion(g, ops::slice_columns(g, raw, 3, 7),
                                                  spec.norm_stabilizer);
  const NodeId t_true = ops::slice_columns(g, targets, 0, 3);
  const NodeId q_true = ops::slice_columns(g, targets, 3, 7);
  PoseLossNodes n;
  n.translation = ops::l2_norm(g, ops::sub(g, t_pred, t_true), spec.norm_stabilizer);
  n.rotation = ops::l2_norm(g, ops::sub(g, q_pred, q_true), spec.norm_stabilizer);
  n.total = ops::add(g, n.translation, ops::scale(g, n.rotation, static_cast<T>(spec.beta)));
  return n;
}

/// Packs poses into an (N,7) target tensor.
template <typename T>
Tensor<T> pose_targets(const std::vector<Pose>& poses) {
  if (poses.empty()) throw std::invalid_argument("pose_targets: empty pose list");
  Tensor<T> t(Shape{poses.size(), 7});
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) t[7 * i + c] = static_cast<T>(poses[i].translation[c]);
    for (std::size_t c = 0; c < 4; ++c) t[7 * i + 3 + c] = static_cast<T>(poses[i].rotation[c]);
  }
  return t;
}

/// loss = sum over tops of loss_weight * sum(top); 0 for no tops.
template <typename T>
double aggregate_weighted_loss(const std::vector<std::pair<Tensor<T>, double>>& tops) {
  double loss = 0.0;
  for (const auto& [top, weight] : tops) {
    double s = 0.0;
    for (T v : top.data()) s += static_cast<double>(v);
    loss += weight * s;
  }
  return loss;
}

/// Graph form of aggregate_weighted_loss.
template <typename T>
NodeId aggregate_weighted_loss(Graph<T>& g, const std::vector<std::pair<NodeId, double>>& tops) {
  return ops::weighted_sum(g, tops);
}

/// Balance as the ratio of expected translation error to expected rotation error.
inline double select_beta(double expected_translation_error, double expected_rotation_error) {
  if (!(expected_translation_error > 0.0) || !(expected_rotation_error > 0.0)) {
    throw std::invalid_argument("select_beta: expected errors must be positive");
  }
  return expected_translation_error / expected_rotation_error;
}

}  // namespace cpose
