#pragma once

// Differentiable graph nodes for the operator set used by the pose network.

#include <string>
#include <utility>
#include <vector>

#include "cpose/graph.hpp"
#include "cpose/kernels.hpp"

namespace cpose::ops {

template <typename T>
using Grads = std::vector<std::optional<Tensor<T>>>;

template <typename T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId kernel, NodeId bias, std::size_t stride,
              std::size_t pad) {
  return g.op(
      "conv2d", {x, kernel, bias},
      [=](const auto& in) { return kernels::conv2d_forward(*in[0], *in[1], *in[2], stride, pad); },
      [=](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        auto cg = kernels::conv2d_backward(*in[0], *in[1], stride, pad, dy);
        return Grads<T>{std::move(cg.input), std::move(cg.kernel), std::move(cg.bias)};
      });
}

template <typename T>
NodeId maxpool2d(Graph<T>& g, NodeId x, std::size_t window, std::size_t stride,
                 std::size_t pad = 0) {
  return g.op(
      "maxpool2d", {x},
      [=](const auto& in) { return kernels::maxpool2d_forward(*in[0], window, stride, pad); },
      [=](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{kernels::maxpool2d_backward(*in[0], window, stride, pad, dy)};
      });
}

template <typename T>
NodeId avgpool2d(Graph<T>& g, NodeId x, std::size_t window, std::size_t stride,
                 std::size_t pad = 0) {
  return g.op(
      "avgpool2d", {x},
      [=](const auto& in) { return kernels::avgpool2d_forward(*in[0], window, stride, pad); },
      [=](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{kernels::avgpool2d_backward(in[0]->shape(), window, stride, pad, dy)};
      });
}

template <typename T>
NodeId relu(Graph<T>& g, NodeId x) {
  return g.op(
      "relu", {x}, [](const auto& in) { return kernels::relu_forward(*in[0]); },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{kernels::relu_backward(*in[0], dy)};
      });
}

template <typename T>
NodeId lrn(Graph<T>& g, NodeId x, kernels::LrnParams p = {}) {
  kernels::validate_lrn(p);
  return g.op(
      "lrn", {x}, [=](const auto& in) { return kernels::lrn_forward(*in[0], p); },
      [=](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{kernels::lrn_backward(*in[0], p, dy)};
      });
}

template <typename T>
NodeId concat_channels(Graph<T>& g, std::vector<NodeId> xs) {
  return g.op(
      "concat_channels", std::move(xs),
      [](const auto& in) { return kernels::concat_channels_forward<T>(in); },
      [](const auto& in, const Tensor<T>& out, const Tensor<T>& dy, const std::vector<bool>&) {
        const bool batched = out.rank() == 4;
        const std::size_t cdim = batched ? 1 : 0;
        Grads<T> grads;
        std::size_t c0 = 0;
        for (const Tensor<T>* t : in) {
          const std::size_t c = t->dim(cdim);
          grads.emplace_back(kernels::slice_channels(dy, c0, c0 + c));
          c0 += c;
        }
        return grads;
      });
}

template <typename T>
NodeId linear(Graph<T>& g, NodeId x, NodeId weight, NodeId bias) {
  return g.op(
      "linear", {x, weight, bias},
      [](const auto& in) { return kernels::linear_forward(*in[0], *in[1], *in[2]); },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        auto lg = kernels::linear_backward(*in[0], *in[1], dy);
        return Grads<T>{std::move(lg.input), std::move(lg.weight), std::move(lg.bias)};
      });
}

template <typename T>
NodeId l2_norm(Graph<T>& g, NodeId x, double stabilizer = kernels::kNormStabilizer) {
  return g.op(
      "l2_norm", {x}, [](const auto& in) { return kernels::l2_norm_forward(*in[0]); },
      [=](const auto& in, const Tensor<T>& out, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{kernels::l2_norm_backward(*in[0], out, dy, stabilizer)};
      });
}

/// (N, ...) -> (N, prod(...)); a (C,H,W) input becomes (1, C*H*W).
template <typename T>
NodeId flatten(Graph<T>& g, NodeId x) {
  return g.op(
      "flatten", {x},
      [](const auto& in) {
        const Tensor<T>& t = *in[0];
        const std::size_t n = t.rank() == 4 ? t.dim(0) : 1;
        return t.reshaped({n, t.numel() / n});
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{dy.reshaped(in[0]->shape())};
      });
}

template <typename T>
NodeId sum(Graph<T>& g, NodeId x) {
  return g.op(
      "sum", {x},
      [](const auto& in) {
        T acc = 0;
        for (T v : in[0]->data()) acc += v;
        return Tensor<T>::scalar(acc);
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        return Grads<T>{Tensor<T>(in[0]->shape(), dy[0])};
      });
}

template <typename T>
NodeId scale(Graph<T>& g, NodeId x, T factor) {
  return g.op(
      "scale", {x},
      [=](const auto& in) {
        Tensor<T> y = *in[0];
        for (T& v : y.data()) v *= factor;
        return y;
      },
      [=](const auto&, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        Tensor<T> dx = dy;
        for (T& v : dx.data()) v *= factor;
        return Grads<T>{std::move(dx)};
      });
}

/// a + sign * b for equally shaped tensors.
template <typename T>
NodeId add_scaled(Graph<T>& g, NodeId a, NodeId b, T sign) {
  return g.op(
      sign > 0 ? "add" : "sub", {a, b},
      [=](const auto& in) {
        if (in[0]->shape() != in[1]->shape()) {
          throw ShapeError("add: shape mismatch " + shape_str(in[0]->shape()) + " vs " +
                           shape_str(in[1]->shape()));
        }
        Tensor<T> y = *in[0];
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] += sign * (*in[1])[i];
        return y;
      },
      [=](const auto&, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        Tensor<T> db = dy;
        for (T& v : db.data()) v *= sign;
        return Grads<T>{dy, std::move(db)};
      });
}

template <typename T>
NodeId add(Graph<T>& g, NodeId a, NodeId b) {
  return add_scaled(g, a, b, T(1));
}

template <typename T>
NodeId sub(Graph<T>& g, NodeId a, NodeId b) {
  return add_scaled(g, a, b, T(-1));
}

/// Elementwise product of equally shaped tensors.
template <typename T>
NodeId mul(Graph<T>& g, NodeId a, NodeId b) {
  return g.op(
      "mul", {a, b},
      [](const auto& in) {
        if (in[0]->shape() != in[1]->shape()) {
          throw ShapeError("mul: shape mismatch " + shape_str(in[0]->shape()) + " vs " +
                           shape_str(in[1]->shape()));
        }
        Tensor<T> y = *in[0];
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= (*in[1])[i];
        return y;
      },
      [](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        Tensor<T> da = dy, db = dy;
        for (std::size_t i = 0; i < dy.numel(); ++i) {
          da[i] *= (*in[1])[i];
          db[i] *= (*in[0])[i];
        }
        return Grads<T>{std::move(da), std::move(db)};
      });
}

/// Columns [c0, c1) of an (N,D) tensor.
template <typename T>
NodeId slice_columns(Graph<T>& g, NodeId x, std::size_t c0, std::size_t c1) {
  return g.op(
      "slice_columns", {x},
      [=](const auto& in) {
        const Tensor<T>& t = *in[0];
        if (t.rank() != 2 || c0 >= c1 || c1 > t.dim(1)) {
          throw ShapeError("slice_columns: bad range for shape " + shape_str(t.shape()));
        }
        Tensor<T> y(Shape{t.dim(0), c1 - c0});
        for (std::size_t r = 0; r < t.dim(0); ++r)
          for (std::size_t c = c0; c < c1; ++c) y[r * (c1 - c0) + c - c0] = t[r * t.dim(1) + c];
        return y;
      },
      [=](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        const Tensor<T>& t = *in[0];
        Tensor<T> dx(t.shape());
        for (std::size_t r = 0; r < t.dim(0); ++r)
          for (std::size_t c = c0; c < c1; ++c) dx[r * t.dim(1) + c] = dy[r * (c1 - c0) + c - c0];
        return Grads<T>{std::move(dx)};
      });
}

/// Rows of an (N,4) tensor of raw (w,x,y,z) values mapped to unit quaternions
/// with w >= 0. A row with norm at or below the stabilizer maps to the
/// identity and passes no gradient.
template <typename T>
NodeId normalize_quaternion(Graph<T>& g, NodeId x,
                            double stabilizer = kernels::kNormStabilizer) {
  return g.op(
      "normalize_quaternion", {x},
      [=](const auto& in) {
        const Tensor<T>& t = *in[0];
        if (t.rank() != 2 || t.dim(1) != 4) {
          throw ShapeError("normalize_quaternion: expected (N,4), got " + shape_str(t.shape()));
        }
        Tensor<T> y(t.shape());
        for (std::size_t r = 0; r < t.dim(0); ++r) {
          const T* q = t.raw() + 4 * r;
          const T norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
          if (!(norm > static_cast<T>(stabilizer))) {
            y[4 * r] = T(1);
            continue;
          }
          const T s = (q[0] < T(0) ? T(-1) : T(1)) / norm;
          for (std::size_t c = 0; c < 4; ++c) y[4 * r + c] = s * q[c];
        }
        return y;
      },
      [=](const auto& in, const Tensor<T>& out, const Tensor<T>& dy, const std::vector<bool>&) {
        const Tensor<T>& t = *in[0];
        Tensor<T> dx(t.shape());
        for (std::size_t r = 0; r < t.dim(0); ++r) {
          const T* q = t.raw() + 4 * r;
          const T norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
          if (!(norm > static_cast<T>(stabilizer))) continue;
          // out = s*u with u = q/|q|; d out/dq = s (I - u u^T) / |q|.
          const T s = q[0] < T(0) ? T(-1) : T(1);
          const T* y = out.raw() + 4 * r;
          const T* gy = dy.raw() + 4 * r;
          T dot = 0;
          for (std::size_t c = 0; c < 4; ++c) dot += y[c] * gy[c];
          for (std::size_t c = 0; c < 4; ++c) dx[4 * r + c] = s * (gy[c] - y[c] * dot) / norm;
        }
        return Grads<T>{std::move(dx)};
      });
}

/// Sum over (node, weight) pairs of weight * sum(node).
template <typename T>
NodeId weighted_sum(Graph<T>& g, const std::vector<std::pair<NodeId, double>>& tops) {
  std::vector<NodeId> ids;
  std::vector<double> weights;
  for (const auto& [id, w] : tops) {
    ids.push_back(id);
    weights.push_back(w);
  }
  return g.op(
      "weighted_sum", ids,
      [=](const auto& in) {
        T loss = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          T s = 0;
          for (T v : in[i]->data()) s += v;
          loss += static_cast<T>(weights[i]) * s;
        }
        return Tensor<T>::scalar(loss);
      },
      [=](const auto& in, const Tensor<T>&, const Tensor<T>& dy, const std::vector<bool>&) {
        Grads<T> grads;
        for (std::size_t i = 0; i < in.size(); ++i) {
          grads.emplace_back(Tensor<T>(in[i]->shape(), static_cast<T>(weights[i]) * dy[0]));
        }
        return grads;
      });
}

}  // namespace cpose::ops
