#pragma once

// Photometric distortions for training-set expansion. Outputs are snapped
// to 8-bit levels so augmented datasets survive a PPM round trip bitwise.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpose/dataset.hpp"

namespace cpose {

struct AugmentationSpec {
  double sigma_lo = 0.5, sigma_hi = 2.0;
  std::vector<std::size_t> median_windows{3, 5};
  double brightness_lo = -0.2, brightness_hi = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma_lo > 0.0 && sigma_lo <= sigma_hi)) throw std::invalid_argument("gaussian sigma range must satisfy 0 < lo <= hi");
    if (median_windows.empty()) throw std::invalid_argument("median window choices are empty");
    for (std::size_t w : median_windows)
      if (w % 2 == 0) throw std::invalid_argument("median window " + std::to_string(w) + " is not odd");
    if (!(brightness_lo <= brightness_hi)) throw std::invalid_argument("brightness range must satisfy lo <= hi");
  }
};

enum class Distortion { gaussian_blur, median_blur, brightness };

namespace detail {

inline double snap_level(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

}  // namespace detail

/// Separable Gaussian with replicated borders, radius ceil(3 sigma).
inline Tensor<double> gaussian_blur(const Tensor<double>& img, double sigma) {
  const auto [c, h, w] = std::array{img.dim(0), img.dim(1), img.dim(2)};
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= total;

  Tensor<double> tmp(img.shape()), out(img.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = img.data().data() + ch * h * w;
    double* mid = tmp.data().data() + ch * h * w;
    double* dst = out.data().data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 src[y * w + detail::clamp_index(static_cast<std::ptrdiff_t>(x) + i, w)];
        mid[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 mid[detail::clamp_index(static_cast<std::ptrdiff_t>(y) + i, h) * w + x];
        dst[y * w + x] = detail::snap_level(acc);
      }
  }
  return out;
}

inline Tensor<double> median_blur(const Tensor<double>& img, std::size_t window) {
  if (window % 2 == 0) throw std::invalid_argument("median window must be odd");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  Tensor<double> out(img.shape());
  std::vector<double> buf(window * window);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = img.data().data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t n = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
            buf[n++] = src[detail::clamp_index(static_cast<std::ptrdiff_t>(y) + dy, h) * w +
                           detail::clamp_index(static_cast<std::ptrdiff_t>(x) + dx, w)];
        std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n / 2), buf.begin() + static_cast<std::ptrdiff_t>(n));
        out[ch * h * w + y * w + x] = detail::snap_level(buf[n / 2]);
      }
  }
  return out;
}

inline Tensor<double> adjust_brightness(const Tensor<double>& img, double delta) {
  Tensor<double> out(img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) out[i] = detail::snap_level(img[i] + delta);
  return out;
}

/// One distortion kind and its parameters, drawn from (seed, frame, draw).
struct DistortionDraw {
  Distortion kind;
  double sigma = 0.0;
  std::size_t window = 0;
  double delta = 0.0;
};

inline DistortionDraw draw_distortion(const AugmentationSpec& spec, std::size_t frame_index,
                                      std::uint64_t draw_index) {
  Rng rng(keyed_seed(spec.seed, {3, frame_index, draw_index}));
  DistortionDraw d{static_cast<Distortion>(rng.below(3))};
  switch (d.kind) {
    case Distortion::gaussian_blur: d.sigma = rng.uniform(spec.sigma_lo, spec.sigma_hi); break;
    case Distortion::median_blur: d.window = spec.median_windows[rng.below(spec.median_windows.size())]; break;
    case Distortion::brightness: d.delta = rng.uniform(spec.brightness_lo, spec.brightness_hi); break;
  }
  return d;
}

inline PoseSample augment(const PoseSample& sample, const AugmentationSpec& spec, std::uint64_t draw_index) {
  spec.validate();
  const DistortionDraw d = draw_distortion(spec, sample.frame_index, draw_index);
  PoseSample out = sample;
  switch (d.kind) {
    case Distortion::gaussian_blur: out.image = gaussian_blur(sample.image, d.sigma); break;
    case Distortion::median_blur: out.image = median_blur(sample.image, d.window); break;
    case Distortion::brightness: out.image = adjust_brightness(sample.image, d.delta); break;
  }
  return out;
}

/// Raw frames followed by `per_frame` distorted copies of each (draw indices
/// 1..per_frame), the 1 : per_frame mix used for augmented training.
inline Dataset expand_with_augmentations(const Dataset& ds, const AugmentationSpec& spec, std::size_t per_frame) {
  spec.validate();
  Dataset out;
  out.info = ds.info;
  out.info.lineage.push_back("augment seed=" + std::to_string(spec.seed) + " per_frame=" + std::to_string(per_frame));
  out.samples.reserve(ds.size() * (1 + per_frame));
  out.samples = ds.samples;
  for (std::uint64_t d = 1; d <= per_frame; ++d)
    for (const auto& s : ds.samples) out.samples.push_back(augment(s, spec, d));
  return out;
}

}  // namespace cpose
