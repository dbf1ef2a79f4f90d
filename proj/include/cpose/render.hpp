#pragma once

// Ray-cast renderer for the synthetic stomach-like scene: the inner wall of a
// bumpy deformed sphere lit by a headlight at the camera, with specular
// highlights. Pixel values are a pure function of the camera pose.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cpose/pose.hpp"
#include "cpose/rng.hpp"
#include "cpose/tensor.hpp"

namespace cpose {

struct SurfaceWave {
  Vec3 direction;
  double frequency, amplitude, phase;
};

/// Procedural scene. Everything derives from `scene_seed`.
class SyntheticScene {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5704AC4;

  explicit SyntheticScene(std::uint64_t scene_seed = kDefaultSeed) {
    Rng rng(keyed_seed(scene_seed, {1}));
    const auto random_dir = [&] {
      Vec3 d;
      double n;
      do {
        d = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        n = norm(d);
      } while (n < 0.2 || n > 1.0);
      return Vec3{d[0] / n, d[1] / n, d[2] / n};
    };
    // Low-frequency folds, then fine bumps.
    for (int i = 0; i < 5; ++i) {
      shape_.push_back({random_dir(), rng.uniform(1.0, 2.5), rng.uniform(0.02, 0.05),
                        rng.uniform(0, 6.283185307179586)});
    }
    for (int i = 0; i < 6; ++i) {
      shape_.push_back({random_dir(), rng.uniform(6.0, 12.0), rng.uniform(0.003, 0.008),
                        rng.uniform(0, 6.283185307179586)});
    }
    for (std::size_t c = 0; c < 3; ++c) {
      for (int i = 0; i < 4; ++i) {
        albedo_[c].push_back({random_dir(), rng.uniform(1.5, 5.0), rng.uniform(0.08, 0.2),
                              rng.uniform(0, 6.283185307179586)});
      }
    }
  }

  double base_radius() const { return base_radius_; }

  /// Wall distance from the centre along unit direction u.
  double radius(const Vec3& u) const {
    double r = 1.0;
    for (const auto& w : shape_) r += w.amplitude * std::sin(w.frequency * dot(w.direction, u) + w.phase);
    return base_radius_ * r;
  }

  /// Upper bound on radius() over all directions.
  double max_radius() const {
    double a = 1.0;
    for (const auto& w : shape_) a += w.amplitude;
    return base_radius_ * a;
  }

  double min_radius() const {
    double a = 1.0;
    for (const auto& w : shape_) a -= w.amplitude;
    return base_radius_ * a;
  }

  Vec3 albedo(const Vec3& u) const {
    static constexpr Vec3 kBase{0.85, 0.48, 0.42};
    Vec3 c;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double t = 0.0;
      for (const auto& w : albedo_[ch]) t += w.amplitude * std::sin(w.frequency * dot(w.direction, u) + w.phase);
      c[ch] = std::clamp(kBase[ch] * (1.0 + 2.0 * t), 0.05, 1.0);
    }
    return c;
  }

  /// Signed distance-like field: negative inside the wall.
  double field(const Vec3& p) const {
    const double r = norm(p);
    if (r < 1e-12) return -radius({0, 0, 1});
    return r - radius({p[0] / r, p[1] / r, p[2] / r});
  }

  static double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

 private:
  double base_radius_ = 8.0;  // cm
  std::vector<SurfaceWave> shape_;
  std::array<std::vector<SurfaceWave>, 3> albedo_;
};

struct CameraModel {
  std::size_t height = 64, width = 64;
  double fov_radians = 1.5707963267948966;  // horizontal
};

/// Renders a (3,H,W) image in [0,1], quantized to 8-bit levels. The camera
/// looks along its +z axis with +x right and +y down; the pose rotation maps
/// camera axes into the scene frame.
inline Tensor<double> render_view(const SyntheticScene& scene, const CameraModel& cam,
                                  const Pose& pose) {
  constexpr double kMarchStep = 0.25;
  const Mat3 rot = rotation_matrix(pose.rotation);
  const Vec3 o = pose.translation;
  const double focal = 0.5 * static_cast<double>(cam.width) / std::tan(0.5 * cam.fov_radians);
  const double far = scene.max_radius() + norm(o) + 1.0;
  Tensor<double> img(Shape{3, cam.height, cam.width});
  const std::size_t plane = cam.height * cam.width;
  for (std::size_t v = 0; v < cam.height; ++v) {
    for (std::size_t u = 0; u < cam.width; ++u) {
      Vec3 dc{(static_cast<double>(u) + 0.5 - 0.5 * static_cast<double>(cam.width)) / focal,
              (static_cast<double>(v) + 0.5 - 0.5 * static_cast<double>(cam.height)) / focal, 1.0};
      const double dn = norm(dc);
      for (double& c : dc) c /= dn;
      const Vec3 d = rotate(rot, dc);
      const auto at = [&](double s) { return Vec3{o[0] + s * d[0], o[1] + s * d[1], o[2] + s * d[2]}; };
      // March to the first sign change of the wall field, then bisect.
      double lo = 0.0, hi = far;
      for (double t = kMarchStep; t < far; t += kMarchStep) {
        if (scene.field(at(t)) >= 0.0) {
          hi = t;
          break;
        }
        lo = t;
      }
      for (int it = 0; it < 20; ++it) {
        const double mid = 0.5 * (lo + hi);
        (scene.field(at(mid)) < 0.0 ? lo : hi) = mid;
      }
      const double s = 0.5 * (lo + hi);
      const Vec3 p = at(s);
      constexpr double h = 1e-4;
      Vec3 n{scene.field({p[0] + h, p[1], p[2]}) - scene.field({p[0] - h, p[1], p[2]}),
             scene.field({p[0], p[1] + h, p[2]}) - scene.field({p[0], p[1] - h, p[2]}),
             scene.field({p[0], p[1], p[2] + h}) - scene.field({p[0], p[1], p[2] - h})};
      const double nn = norm(n);
      // Outward gradient; the visible side faces inward.
      for (double& c : n) c = -c / nn;
      const double lambert = std::max(0.0, -SyntheticScene::dot(n, d));
      const double falloff = 1.0 / (1.0 + (s / 6.0) * (s / 6.0));
      const double specular = 0.35 * std::pow(lambert, 40.0);
      const double pr = norm(p);
      const Vec3 albedo = scene.albedo({p[0] / pr, p[1] / pr, p[2] / pr});
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double value = std::clamp(1.6 * albedo[ch] * lambert * falloff + specular, 0.0, 1.0);
        img[ch * plane + v * cam.width + u] = std::round(value * 255.0) / 255.0;
      }
    }
  }
  return img;
}

}  // namespace cpose
