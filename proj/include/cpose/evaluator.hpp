#pragma once

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cpose/dataset.hpp"
#include "cpose/dataset_io.hpp"
#include "cpose/network.hpp"
#include "cpose/pose.hpp"

namespace cpose {

class FrameMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Poses keyed by strictly increasing frame index.
class Trajectory {
 public:
  using Entry = std::pair<std::size_t, Pose>;

  Trajectory() = default;
  explicit Trajectory(std::vector<Entry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      if (entries_[i].first <= entries_[i - 1].first) {
        throw std::invalid_argument("trajectory frame indices must be strictly increasing (frame " +
                                    std::to_string(entries_[i].first) + " follows " +
                                    std::to_string(entries_[i - 1].first) + ")");
      }
    }
  }

  static Trajectory from_dataset(const Dataset& ds) {
    std::vector<Entry> e;
    e.reserve(ds.size());
    for (const auto& s : ds.samples) e.emplace_back(s.frame_index, s.pose);
    return Trajectory(std::move(e));
  }

  void push_back(std::size_t frame, const Pose& p) {
    if (!entries_.empty() && frame <= entries_.back().first) {
      throw std::invalid_argument("trajectory frame indices must be strictly increasing");
    }
    entries_.emplace_back(frame, p);
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const Pose& pose(std::size_t i) const { return entries_.at(i).second; }
  std::size_t frame(std::size_t i) const { return entries_.at(i).first; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Network predictions for every frame of a dataset.
template <typename T>
Trajectory predict_trajectory(const PoseNetwork<T>& net, const Dataset& ds, std::size_t batch = 64) {
  Trajectory out;
  const std::size_t plane = ds.empty() ? 0 : ds.samples[0].image.numel();
  for (std::size_t b = 0; b < ds.size(); b += batch) {
    const std::size_t e = std::min(ds.size(), b + batch);
    const Shape& one = ds.samples[b].image.shape();
    Tensor<T> images(Shape{e - b, one[0], one[1], one[2]});
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t k = 0; k < plane; ++k) images[(i - b) * plane + k] = static_cast<T>(ds.samples[i].image[k]);
    const auto poses = forward_pose(net, images);
    for (std::size_t i = b; i < e; ++i) out.push_back(ds.samples[i].frame_index, poses[i - b]);
  }
  return out;
}

inline void check_paired(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) {
    throw FrameMismatch("trajectories differ in length (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(gt.size()) + ")");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.frame(i) != gt.frame(i)) {
      throw FrameMismatch("frame index mismatch at position " + std::to_string(i) + ": " +
                          std::to_string(pred.frame(i)) + " vs " + std::to_string(gt.frame(i)));
    }
  }
}

/// Ground-truth ranges at or below this are treated as no motion; constant
/// angles pick up round-off when passed through quaternions.
inline constexpr double kDegenerateRange = 1e-9;

struct AxisError {
  /// Percent of the ground-truth range, or the raw MAE when the range is zero.
  double value = 0.0;
  double mae = 0.0;
  double range = 0.0;
  bool degenerate = false;
};

struct PerAxisErrors {
  static constexpr std::array<const char*, 6> kNames{"tx", "ty", "tz", "rx", "ry", "rz"};
  std::array<AxisError, 6> axes;

  const AxisError& operator[](std::size_t i) const { return axes.at(i); }
  const AxisError& at(const std::string& name) const {
    for (std::size_t i = 0; i < kNames.size(); ++i)
      if (name == kNames[i]) return axes[i];
    throw std::out_of_range("unknown axis " + name);
  }
};

/// Range-normalized mean absolute error per axis. Rotations are compared as
/// intrinsic XYZ Euler angles with differences wrapped to (-pi, pi].
inline PerAxisErrors per_axis_errors(const Trajectory& pred, const Trajectory& gt) {
  check_paired(pred, gt);
  PerAxisErrors out;
  if (gt.empty()) return out;
  const auto components = [](const Pose& p) {
    const Vec3 e = euler_xyz(p.rotation);
    return std::array<double, 6>{p.translation[0], p.translation[1], p.translation[2], e[0], e[1], e[2]};
  };
  std::array<double, 6> lo, hi, sum{};
  lo.fill(INFINITY);
  hi.fill(-INFINITY);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = components(gt.pose(i));
    const auto p = components(pred.pose(i));
    for (std::size_t a = 0; a < 6; ++a) {
      lo[a] = std::min(lo[a], g[a]);
      hi[a] = std::max(hi[a], g[a]);
      const double d = p[a] - g[a];
      sum[a] += std::abs(a < 3 ? d : wrap_angle(d));
    }
  }
  for (std::size_t a = 0; a < 6; ++a) {
    AxisError& e = out.axes[a];
    e.mae = sum[a] / static_cast<double>(gt.size());
    e.range = hi[a] - lo[a];
    e.degenerate = !(e.range > kDegenerateRange);
    e.value = e.degenerate ? e.mae : 100.0 * e.mae / e.range;
  }
  return out;
}

/// Rigid transform (no scale) moving `pred` positions onto `gt` in the
/// least-squares sense.
inline std::pair<Mat3, Vec3> umeyama_alignment(const Trajectory& pred, const Trajectory& gt) {
  check_paired(pred, gt);
  const auto n = static_cast<Eigen::Index>(gt.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      src(k, i) = pred.pose(static_cast<std::size_t>(i)).translation[static_cast<std::size_t>(k)];
      dst(k, i) = gt.pose(static_cast<std::size_t>(i)).translation[static_cast<std::size_t>(k)];
    }
  const Eigen::Matrix4d m = Eigen::umeyama(src, dst, false);
  Mat3 r;
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    t[static_cast<std::size_t>(i)] = m(i, 3);
  }
  return {r, t};
}

/// Root mean squared translation residual over paired frames. Raw residuals
/// by default; `align` first applies the best rigid fit of pred onto gt.
inline double trajectory_rmse(const Trajectory& pred, const Trajectory& gt, bool align = false) {
  check_paired(pred, gt);
  if (gt.empty()) throw std::invalid_argument("trajectory_rmse: empty trajectories");
  Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 t{0, 0, 0};
  if (align && gt.size() >= 3) std::tie(r, t) = umeyama_alignment(pred, gt);
  double se = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Vec3 p = rotate(r, pred.pose(i).translation);
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = p[k] + t[k] - gt.pose(i).translation[k];
      se += d * d;
    }
  }
  return std::sqrt(se / static_cast<double>(gt.size()));
}

/// Diagonal of the axis-aligned box around the trajectory's positions.
inline double bounding_box_diagonal(const Trajectory& traj) {
  if (traj.empty()) return 0.0;
  Vec3 lo = traj.pose(0).translation, hi = lo;
  for (const auto& [f, p] : traj.entries())
    for (std::size_t k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p.translation[k]);
      hi[k] = std::max(hi[k], p.translation[k]);
    }
  return norm(Vec3{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
}

enum class ExportFormat { csv, svg_plot };

inline ExportFormat export_format_from_string(const std::string& s) {
  if (s == "csv") return ExportFormat::csv;
  if (s == "svg" || s == "svg_plot") return ExportFormat::svg_plot;
  throw std::invalid_argument("unknown export format: " + s);
}

inline std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "frame,tx,ty,tz,qw,qx,qy,qz\n";
  for (const auto& [frame, p] : traj.entries()) {
    out += std::to_string(frame);
    for (double v : p.translation) out += "," + format_double(v);
    for (double v : p.rotation) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

inline Trajectory parse_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("frame,", 0) != 0) {
    throw std::runtime_error("trajectory csv: missing header");
  }
  Trajectory traj;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 8) throw std::runtime_error("trajectory csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " fields");
    Pose p;
    for (std::size_t k = 0; k < 3; ++k) p.translation[k] = parse_double(cells[1 + k]);
    for (std::size_t k = 0; k < 4; ++k) p.rotation[k] = parse_double(cells[4 + k]);
    traj.push_back(std::stoull(cells[0]), p);
  }
  return traj;
}

inline Trajectory load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open trajectory " + path.string());
  return parse_trajectory_csv(is);
}

/// Two side-by-side panels (x-y and x-z projections), ground truth in grey,
/// prediction in red. Coordinates are printed with fixed precision so the
/// bytes depend only on the input.
inline std::string trajectory_svg(const Trajectory& pred, const Trajectory* gt = nullptr) {
  constexpr double kPanel = 400.0, kMargin = 20.0;
  std::vector<const Trajectory*> all{&pred};
  if (gt) all.push_back(gt);
  Vec3 lo{0, 0, 0}, hi{0, 0, 0};
  bool any = false;
  for (const Trajectory* t : all)
    for (const auto& [f, p] : t->entries())
      for (std::size_t k = 0; k < 3; ++k) {
        lo[k] = any ? std::min(lo[k], p.translation[k]) : p.translation[k];
        hi[k] = any ? std::max(hi[k], p.translation[k]) : p.translation[k];
        if (k == 2) any = true;
      }
  double span = 1e-9;
  for (std::size_t k = 0; k < 3; ++k) span = std::max(span, hi[k] - lo[k]);
  const double scale = (kPanel - 2 * kMargin) / span;
  char buf[64];
  const auto polyline = [&](const Trajectory& t, std::size_t axis_v, double x0, const char* colour) {
    std::string s = "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < t.size(); ++i) {
      const Vec3& p = t.pose(i).translation;
      std::snprintf(buf, sizeof(buf), "%s%.3f,%.3f", i ? " " : "", x0 + kMargin + (p[0] - lo[0]) * scale,
                    kPanel - kMargin - (p[axis_v] - lo[axis_v]) * scale);
      s += buf;
    }
    return s + "\"/>\n";
  };
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"420\" viewBox=\"0 0 800 420\">\n";
  svg += "<rect width=\"800\" height=\"420\" fill=\"white\"/>\n";
  for (std::size_t panel = 0; panel < 2; ++panel) {
    const double x0 = kPanel * static_cast<double>(panel);
    const std::size_t axis_v = panel == 0 ? 1 : 2;
    svg += "<g>\n";
    std::snprintf(buf, sizeof(buf), "%.0f", x0 + kMargin);
    svg += "<text x=\"" + std::string(buf) + "\" y=\"414\" font-size=\"12\" font-family=\"sans-serif\">" +
           (panel == 0 ? "x-y" : "x-z") + "</text>\n";
    if (gt) svg += polyline(*gt, axis_v, x0, "#777777");
    svg += polyline(pred, axis_v, x0, "#cc2222");
    svg += "</g>\n";
  }
  return svg + "</svg>\n";
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void export_trajectory(const Trajectory& traj, const std::filesystem::path& path, ExportFormat format,
                              const Trajectory* ground_truth = nullptr) {
  write_text_file(path, format == ExportFormat::csv ? trajectory_csv(traj) : trajectory_svg(traj, ground_truth));
}

/// Plain-text metrics table.
inline std::string metrics_report(const PerAxisErrors& errors, double rmse, double diagonal) {
  std::string out = "axis  error      mae          range\n";
  char buf[128];
  for (std::size_t a = 0; a < 6; ++a) {
    const AxisError& e = errors[a];
    std::snprintf(buf, sizeof(buf), "%-4s  %8.3f%s  %-11.6g  %-11.6g\n", PerAxisErrors::kNames[a], e.value,
                  e.degenerate ? "* " : "% ", e.mae, e.range);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "rmse  %.6g (bounding-box diagonal %.6g, ratio %.4f)\n", rmse, diagonal,
                diagonal > 0 ? rmse / diagonal : 0.0);
  out += buf;
  if (std::any_of(errors.axes.begin(), errors.axes.end(), [](const AxisError& e) { return e.degenerate; })) {
    out += "* zero ground-truth range: raw MAE reported\n";
  }
  return out;
}

}  // namespace cpose
