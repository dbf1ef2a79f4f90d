#pragma once

// Forward and backward kernels for the operator set. These are pure functions
// over tensors; graph.hpp wires them into differentiable nodes.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "cpose/tensor.hpp"

namespace cpose::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Image-like tensor viewed as (batch, channels, height, width).
struct Dims4 {
  std::size_t n, c, h, w;
  bool batched;
  std::size_t plane() const { return h * w; }
  std::size_t sample() const { return c * h * w; }
};

inline Dims4 image_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected (C,H,W) or (N,C,H,W) input, got " +
                   shape_str(s));
}

inline Shape image_shape(const Dims4& d, std::size_t c, std::size_t h, std::size_t w) {
  if (d.batched) return {d.n, c, h, w};
  return {c, h, w};
}

/// floor((in + 2*pad - window) / stride) + 1, checked.
inline std::size_t window_output_extent(std::size_t in, std::size_t window, std::size_t stride,
                                        std::size_t pad, const char* op, const char* axis) {
  if (stride == 0) throw std::invalid_argument(std::string(op) + ": stride must be positive");
  if (window == 0) throw std::invalid_argument(std::string(op) + ": window must be positive");
  if (window > in + 2 * pad) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(window) + " exceeds padded " +
                     axis + " " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - window) / stride + 1;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

inline ConvGeometry conv_geometry(const Dims4& in, const Shape& kernel, std::size_t bias_len,
                                  std::size_t stride, std::size_t pad) {
  if (kernel.size() != 4) {
    throw ShapeError("conv2d: kernel must be (C_out,C_in,kH,kW), got " + shape_str(kernel));
  }
  if (kernel[1] != in.c) {
    throw ShapeError("conv2d: kernel C_in=" + std::to_string(kernel[1]) +
                     " does not match input channels " + std::to_string(in.c));
  }
  if (bias_len != kernel[0]) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias_len) +
                     " does not match C_out=" + std::to_string(kernel[0]));
  }
  ConvGeometry g{in.c, in.h, in.w, kernel[0], kernel[2], kernel[3], stride, pad, 0, 0};
  g.ho = window_output_extent(in.h, g.kh, stride, pad, "conv2d", "height");
  g.wo = window_output_extent(in.w, g.kw, stride, pad, "conv2d", "width");
  return g;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.out_plane();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* plane = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * g.out_plane();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad) {
  const Dims4 d = image_dims(x.shape(), "conv2d");
  const ConvGeometry g = conv_geometry(d, kernel.shape(), bias.numel(), stride, pad);
  Tensor<T> y(image_shape(d, g.cout, g.ho, g.wo));
  ConstMatMap<T> wm(kernel.raw(), g.cout, g.patch());
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.raw(), g.cout);
  AlignedVector<T> col(g.pointwise() ? 0 : g.patch() * g.out_plane());
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* xn = x.raw() + n * d.sample();
    MatMap<T> yn(y.raw() + n * g.cout * g.out_plane(), g.cout, g.out_plane());
    if (g.pointwise()) {
      yn.noalias() = wm * ConstMatMap<T>(xn, g.cin, g.out_plane());
    } else {
      im2col(xn, g, col.data());
      yn.noalias() = wm * ConstMatMap<T>(col.data(), g.patch(), g.out_plane());
    }
    yn.colwise() += bv;
  }
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input, kernel, bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride,
                             std::size_t pad, const Tensor<T>& dy) {
  const Dims4 d = image_dims(x.shape(), "conv2d");
  const ConvGeometry g = conv_geometry(d, kernel.shape(), kernel.dim(0), stride, pad);
  ConvGrads<T> out{Tensor<T>(x.shape()), Tensor<T>(kernel.shape()), Tensor<T>(Shape{g.cout})};
  ConstMatMap<T> wm(kernel.raw(), g.cout, g.patch());
  MatMap<T> dw(out.kernel.raw(), g.cout, g.patch());
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(out.bias.raw(), g.cout);
  AlignedVector<T> col(g.pointwise() ? 0 : g.patch() * g.out_plane());
  AlignedVector<T> dcol(g.pointwise() ? 0 : g.patch() * g.out_plane());
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* xn = x.raw() + n * d.sample();
    T* dxn = out.input.raw() + n * d.sample();
    ConstMatMap<T> dyn(dy.raw() + n * g.cout * g.out_plane(), g.cout, g.out_plane());
    db += dyn.rowwise().sum();
    if (g.pointwise()) {
      dw.noalias() += dyn * ConstMatMap<T>(xn, g.cin, g.out_plane()).transpose();
      MatMap<T>(dxn, g.cin, g.out_plane()).noalias() = wm.transpose() * dyn;
    } else {
      im2col(xn, g, col.data());
      dw.noalias() += dyn * ConstMatMap<T>(col.data(), g.patch(), g.out_plane()).transpose();
      MatMap<T>(dcol.data(), g.patch(), g.out_plane()).noalias() = wm.transpose() * dyn;
      col2im_add(dcol.data(), g, dxn);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling. Padded cells never win a max and are excluded from averages.

struct PoolGeometry {
  Dims4 in;
  std::size_t window, stride, pad, ho, wo;
};

inline PoolGeometry pool_geometry(const Shape& s, std::size_t window, std::size_t stride,
                                  std::size_t pad, const char* op) {
  PoolGeometry g{image_dims(s, op), window, stride, pad, 0, 0};
  if (pad >= window && window > 0) {
    throw std::invalid_argument(std::string(op) + ": pad must be smaller than window");
  }
  g.ho = window_output_extent(g.in.h, window, stride, pad, op, "height");
  g.wo = window_output_extent(g.in.w, window, stride, pad, op, "width");
  return g;
}

template <typename Fn>
void for_each_pool_window(const PoolGeometry& g, Fn&& fn) {
  const auto clamp_range = [&](std::size_t o, std::size_t extent) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(o * g.stride) -
                                 static_cast<std::ptrdiff_t>(g.pad);
    const std::ptrdiff_t stop = start + static_cast<std::ptrdiff_t>(g.window);
    return std::pair<std::size_t, std::size_t>(
        static_cast<std::size_t>(std::max<std::ptrdiff_t>(start, 0)),
        static_cast<std::size_t>(std::min<std::ptrdiff_t>(stop, static_cast<std::ptrdiff_t>(extent))));
  };
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    const auto [y0, y1] = clamp_range(oy, g.in.h);
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const auto [x0, x1] = clamp_range(ox, g.in.w);
      fn(oy * g.wo + ox, y0, y1, x0, x1);
    }
  }
}

/// Row-major index of the first maximal cell in a pooling window.
template <typename T>
std::size_t window_argmax(const T* plane, std::size_t width, std::size_t y0, std::size_t y1,
                          std::size_t x0, std::size_t x1) {
  std::size_t best = y0 * width + x0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x)
      if (plane[y * width + x] > plane[best]) best = y * width + x;
  return best;
}

template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, std::size_t window, std::size_t stride,
                            std::size_t pad = 0) {
  const PoolGeometry g = pool_geometry(x.shape(), window, stride, pad, "maxpool2d");
  Tensor<T> y(image_shape(g.in, g.in.c, g.ho, g.wo));
  for (std::size_t p = 0; p < g.in.n * g.in.c; ++p) {
    const T* plane = x.raw() + p * g.in.plane();
    T* out = y.raw() + p * g.ho * g.wo;
    for_each_pool_window(g, [&](std::size_t o, std::size_t y0, std::size_t y1, std::size_t x0,
                                std::size_t x1) {
      out[o] = plane[window_argmax(plane, g.in.w, y0, y1, x0, x1)];
    });
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& x, std::size_t window, std::size_t stride,
                             std::size_t pad, const Tensor<T>& dy) {
  const PoolGeometry g = pool_geometry(x.shape(), window, stride, pad, "maxpool2d");
  Tensor<T> dx(x.shape());
  for (std::size_t p = 0; p < g.in.n * g.in.c; ++p) {
    const T* plane = x.raw() + p * g.in.plane();
    T* dplane = dx.raw() + p * g.in.plane();
    const T* g_out = dy.raw() + p * g.ho * g.wo;
    for_each_pool_window(g, [&](std::size_t o, std::size_t y0, std::size_t y1, std::size_t x0,
                                std::size_t x1) {
      dplane[window_argmax(plane, g.in.w, y0, y1, x0, x1)] += g_out[o];
    });
  }
  return dx;
}

template <typename T>
Tensor<T> avgpool2d_forward(const Tensor<T>& x, std::size_t window, std::size_t stride,
                            std::size_t pad = 0) {
  const PoolGeometry g = pool_geometry(x.shape(), window, stride, pad, "avgpool2d");
  Tensor<T> y(image_shape(g.in, g.in.c, g.ho, g.wo));
  for (std::size_t p = 0; p < g.in.n * g.in.c; ++p) {
    const T* plane = x.raw() + p * g.in.plane();
    T* out = y.raw() + p * g.ho * g.wo;
    for_each_pool_window(g, [&](std::size_t o, std::size_t y0, std::size_t y1, std::size_t x0,
                                std::size_t x1) {
      T acc = 0;
      for (std::size_t yy = y0; yy < y1; ++yy)
        for (std::size_t xx = x0; xx < x1; ++xx) acc += plane[yy * g.in.w + xx];
      out[o] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
    });
  }
  return y;
}

template <typename T>
Tensor<T> avgpool2d_backward(const Shape& in_shape, std::size_t window, std::size_t stride,
                             std::size_t pad, const Tensor<T>& dy) {
  const PoolGeometry g = pool_geometry(in_shape, window, stride, pad, "avgpool2d");
  Tensor<T> dx(in_shape);
  for (std::size_t p = 0; p < g.in.n * g.in.c; ++p) {
    T* dplane = dx.raw() + p * g.in.plane();
    const T* g_out = dy.raw() + p * g.ho * g.wo;
    for_each_pool_window(g, [&](std::size_t o, std::size_t y0, std::size_t y1, std::size_t x0,
                                std::size_t x1) {
      const T share = g_out[o] / static_cast<T>((y1 - y0) * (x1 - x0));
      for (std::size_t yy = y0; yy < y1; ++yy)
        for (std::size_t xx = x0; xx < x1; ++xx) dplane[yy * g.in.w + xx] += share;
    });
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

/// Gradient is zero at x == 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// Local response normalization across channels

struct LrnParams {
  std::size_t local_size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};

inline void validate_lrn(const LrnParams& p) {
  if (p.local_size == 0 || p.local_size % 2 == 0) {
    throw std::invalid_argument("lrn: local_size must be odd and positive, got " +
                                std::to_string(p.local_size));
  }
}

/// scale_c = k + alpha/local_size * sum of squares over the channel window.
template <typename T>
Tensor<T> lrn_scale(const Tensor<T>& x, const LrnParams& p) {
  validate_lrn(p);
  const Dims4 d = image_dims(x.shape(), "lrn");
  const std::size_t half = p.local_size / 2;
  const T coeff = static_cast<T>(p.alpha / static_cast<double>(p.local_size));
  Tensor<T> scale(x.shape());
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t c0 = c >= half ? c - half : 0;
      const std::size_t c1 = std::min(d.c, c + half + 1);
      T* s = scale.raw() + n * d.sample() + c * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        T acc = 0;
        for (std::size_t cc = c0; cc < c1; ++cc) {
          const T v = x[n * d.sample() + cc * d.plane() + i];
          acc += v * v;
        }
        s[i] = static_cast<T>(p.k) + coeff * acc;
        if (!(s[i] > T(0))) {
          throw std::domain_error("lrn: k + windowed sum must be positive");
        }
      }
    }
  }
  return scale;
}

template <typename T>
Tensor<T> lrn_forward(const Tensor<T>& x, const LrnParams& p) {
  const Tensor<T> scale = lrn_scale(x, p);
  Tensor<T> y(x.shape());
  const T b = static_cast<T>(p.beta);
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * std::pow(scale[i], -b);
  return y;
}

template <typename T>
Tensor<T> lrn_backward(const Tensor<T>& x, const LrnParams& p, const Tensor<T>& dy) {
  const Tensor<T> scale = lrn_scale(x, p);
  const Dims4 d = image_dims(x.shape(), "lrn");
  const std::size_t half = p.local_size / 2;
  const T b = static_cast<T>(p.beta);
  // t_c = dy_c * x_c * scale_c^(-beta-1)
  Tensor<T> t(x.shape());
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    t[i] = dy[i] * x[i] * std::pow(scale[i], -b - T(1));
    dx[i] = dy[i] * std::pow(scale[i], -b);
  }
  const T coeff = static_cast<T>(2.0 * p.alpha * p.beta / static_cast<double>(p.local_size));
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t c0 = c >= half ? c - half : 0;
      const std::size_t c1 = std::min(d.c, c + half + 1);
      const std::size_t base = n * d.sample() + c * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        T acc = 0;
        for (std::size_t cc = c0; cc < c1; ++cc) acc += t[n * d.sample() + cc * d.plane() + i];
        dx[base + i] -= coeff * x[base + i] * acc;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <typename T>
Tensor<T> concat_channels_forward(const std::vector<const Tensor<T>*>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Dims4 first = image_dims(inputs.front()->shape(), "concat_channels");
  std::size_t total_c = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Dims4 di = image_dims(inputs[i]->shape(), "concat_channels");
    if (di.batched != first.batched || di.n != first.n || di.h != first.h || di.w != first.w) {
      throw ShapeError("concat_channels: input " + std::to_string(i) + " has shape " +
                       shape_str(inputs[i]->shape()) + ", incompatible with input 0 shape " +
                       shape_str(inputs.front()->shape()));
    }
    total_c += di.c;
  }
  Tensor<T> y(image_shape(first, total_c, first.h, first.w));
  for (std::size_t n = 0; n < first.n; ++n) {
    T* dst = y.raw() + n * total_c * first.plane();
    for (const Tensor<T>* in : inputs) {
      const std::size_t chunk = in->numel() / first.n;
      std::copy_n(in->raw() + n * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return y;
}

/// Channel range [c0, c1) of an image tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  const Dims4 d = image_dims(x.shape(), "slice_channels");
  if (c0 >= c1 || c1 > d.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") outside " + std::to_string(d.c) + " channels");
  }
  Tensor<T> y(image_shape(d, c1 - c0, d.h, d.w));
  const std::size_t chunk = (c1 - c0) * d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    std::copy_n(x.raw() + n * d.sample() + c0 * d.plane(), chunk, y.raw() + n * chunk);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
void check_linear(const Shape& x, const Shape& w, std::size_t bias_len) {
  if (x.size() != 2) throw ShapeError("linear: input must be (N,D_in), got " + shape_str(x));
  if (w.size() != 2) throw ShapeError("linear: weight must be (D_out,D_in), got " + shape_str(w));
  if (w[1] != x[1]) {
    throw ShapeError("linear: weight D_in=" + std::to_string(w[1]) + " does not match input D_in=" +
                     std::to_string(x[1]));
  }
  if (bias_len != w[0]) {
    throw ShapeError("linear: bias length " + std::to_string(bias_len) + " does not match D_out=" +
                     std::to_string(w[0]));
  }
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_linear<T>(x.shape(), w.shape(), b.numel());
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  Tensor<T> y(Shape{n, dout});
  MatMap<T> ym(y.raw(), n, dout);
  ym.noalias() = ConstMatMap<T>(x.raw(), n, din) * ConstMatMap<T>(w.raw(), dout, din).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.raw(), dout);
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input, weight, bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>(Shape{dout})};
  ConstMatMap<T> dym(dy.raw(), n, dout);
  MatMap<T>(g.input.raw(), n, din).noalias() = dym * ConstMatMap<T>(w.raw(), dout, din);
  MatMap<T>(g.weight.raw(), dout, din).noalias() = dym.transpose() * ConstMatMap<T>(x.raw(), n, din);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.bias.raw(), dout) = dym.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// Euclidean norm over the last axis

inline constexpr double kNormStabilizer = 1e-12;

/// (D) -> scalar, or (N,D) -> (N).
template <typename T>
Tensor<T> l2_norm_forward(const Tensor<T>& x) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("l2_norm: expected (D) or (N,D), got " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rank() == 1 ? 1 : x.dim(0);
  const std::size_t cols = x.shape().back();
  Tensor<T> y = x.rank() == 1 ? Tensor<T>(Shape{}) : Tensor<T>(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c] * x[r * cols + c];
    y[r] = std::sqrt(acc);
  }
  return y;
}

/// x/|x|, with zero gradient when |x| <= stabilizer.
template <typename T>
Tensor<T> l2_norm_backward(const Tensor<T>& x, const Tensor<T>& norm, const Tensor<T>& dy,
                           double stabilizer = kNormStabilizer) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Tensor<T> dx(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    if (!(norm[r] > static_cast<T>(stabilizer))) continue;
    const T s = dy[r] / norm[r];
    for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] = s * x[r * cols + c];
  }
  return dx;
}

}  // namespace cpose::kernels
