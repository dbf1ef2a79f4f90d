#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cpose/pose.hpp"
#include "cpose/render.hpp"
#include "cpose/rng.hpp"
#include "cpose/tensor.hpp"

namespace cpose {

/// One labelled frame. Image is (C,H,W) with values in [0,1].
struct PoseSample {
  Tensor<double> image;
  Pose pose;
  std::size_t frame_index = 0;
  std::optional<std::string> camera_tag;

  friend bool operator==(const PoseSample&, const PoseSample&) = default;
};

struct DatasetInfo {
  std::string source = "unknown";
  std::uint64_t seed = 0;
  /// Augmentations applied, oldest first.
  std::vector<std::string> lineage;

  friend bool operator==(const DatasetInfo&, const DatasetInfo&) = default;
};

struct Dataset {
  std::vector<PoseSample> samples;
  DatasetInfo info;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  std::vector<Pose> poses() const {
    std::vector<Pose> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.pose);
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class TrajectoryKind { smooth_loop, fast_rotation, large_translation };

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::smooth_loop: return "smooth_loop";
    case TrajectoryKind::fast_rotation: return "fast_rotation";
    case TrajectoryKind::large_translation: return "large_translation";
  }
  return "?";
}

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "smooth_loop") return TrajectoryKind::smooth_loop;
  if (s == "fast_rotation") return TrajectoryKind::fast_rotation;
  if (s == "large_translation") return TrajectoryKind::large_translation;
  throw std::invalid_argument("unknown trajectory kind: " + s);
}

/// Camera path parameterized by s in [0,1]. All oscillations have integer
/// frequencies in s, so every kind closes on itself at s = 1; seeds only
/// shift phases and amplitudes.
class CameraTrajectory {
 public:
  CameraTrajectory(TrajectoryKind kind, std::uint64_t seed) : kind_(kind) {
    Rng rng(keyed_seed(seed, {2, static_cast<std::uint64_t>(kind)}));
    for (double& p : phase_) p = rng.uniform(0.0, kTwoPi);
    jitter_ = rng.uniform(0.9, 1.1);
  }

  Pose at(double s) const {
    const double a = kTwoPi * s;
    Pose p;
    switch (kind_) {
      case TrajectoryKind::smooth_loop: {
        // The same closed lap swept three times, plus a slow drift that
        // keeps the laps from coinciding exactly.
        const double u = 3 * a;
        const double r = jitter_ * (2.5 + 0.8 * std::cos(u + phase_[0]));
        const double drift = std::sin(a + phase_[4]);
        p.translation = {r * std::cos(u) + 0.25 * drift, r * std::sin(u) - 0.2 * drift,
                         1.2 * std::sin(2 * u + phase_[1]) + 0.2 * std::cos(a + phase_[4])};
        p.rotation = from_euler_xyz({0.30 * std::sin(u + phase_[2]) + 0.04 * drift,
                                     0.30 * std::sin(2 * u + phase_[3]), 0.25 * std::sin(u + phase_[2] + phase_[3])});
        break;
      }
      case TrajectoryKind::fast_rotation: {
        const double r = jitter_ * 1.5;
        p.translation = {r * std::cos(a), r * std::sin(a), 0.5 * std::sin(a + phase_[1])};
        p.rotation = from_euler_xyz({0.6 * std::sin(7 * a + phase_[2]), 0.6 * std::sin(9 * a + phase_[3]),
                                     0.5 * std::sin(11 * a + phase_[4])});
        break;
      }
      case TrajectoryKind::large_translation: {
        const double r = jitter_ * (4.0 + 0.8 * std::cos(2 * a + phase_[0]));
        p.translation = {r * std::cos(a), r * std::sin(a), 2.5 * std::sin(2 * a + phase_[1])};
        p.rotation = from_euler_xyz({0.2 * std::sin(2 * a + phase_[2]), 0.2 * std::sin(3 * a + phase_[3]),
                                     0.15 * std::sin(a + phase_[4])});
        break;
      }
    }
    return p;
  }

 private:
  static constexpr double kTwoPi = 6.283185307179586;
  TrajectoryKind kind_;
  std::array<double, 5> phase_{};
  double jitter_ = 1.0;
};

struct SynthOptions {
  std::size_t height = 64, width = 64;
  TrajectoryKind trajectory = TrajectoryKind::smooth_loop;
  std::uint64_t scene_seed = SyntheticScene::kDefaultSeed;
  std::string camera_tag = "synthetic";
  /// Frames are independent, so any thread count gives identical output.
  std::size_t threads = 1;
};

/// Renders `n_frames` views along a camera trajectory. Bitwise deterministic
/// in (seed, options).
inline Dataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_frames,
                                          const SynthOptions& opt = {}) {
  if (n_frames < 2) throw std::invalid_argument("synthetic dataset needs at least 2 frames");
  const SyntheticScene scene(opt.scene_seed);
  const CameraTrajectory path(opt.trajectory, seed);
  const CameraModel cam{opt.height, opt.width};
  Dataset ds;
  ds.info = {"synthetic:" + to_string(opt.trajectory), seed, {}};
  ds.samples.resize(n_frames);
  const auto render_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double s = static_cast<double>(i) / static_cast<double>(n_frames - 1);
      PoseSample& sample = ds.samples[i];
      sample.pose = path.at(s);
      sample.image = render_view(scene, cam, sample.pose);
      sample.frame_index = i;
      sample.camera_tag = opt.camera_tag;
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(opt.threads, 1, n_frames);
  if (workers == 1) {
    render_range(0, n_frames);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(render_range, n_frames * w / workers, n_frames * (w + 1) / workers);
    for (auto& t : pool) t.join();
  }
  return ds;
}

/// Contiguous split: the first floor(n * f) frames train, the rest validate.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0, 1)");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * train_fraction));
  if (n_train == 0 || n_train == ds.size()) {
    throw std::invalid_argument("split of " + std::to_string(ds.size()) + " frames at " +
                                std::to_string(train_fraction) + " leaves one side empty");
  }
  Dataset train, val;
  train.info = val.info = ds.info;
  train.samples.assign(ds.samples.begin(), ds.samples.begin() + static_cast<std::ptrdiff_t>(n_train));
  val.samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(n_train), ds.samples.end());
  return {std::move(train), std::move(val)};
}

}  // namespace cpose
