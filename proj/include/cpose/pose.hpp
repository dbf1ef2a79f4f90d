#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace cpose {

using Vec3 = std::array<double, 3>;
/// (w, x, y, z)
using Quat = std::array<double, 4>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Camera pose: translation in cm plus a unit quaternion with w >= 0.
struct Pose {
  Vec3 translation{0.0, 0.0, 0.0};
  Quat rotation{1.0, 0.0, 0.0, 0.0};

  friend bool operator==(const Pose&, const Pose&) = default;
};

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

inline double norm(const Quat& q) {
  return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
}

/// Unit norm and w >= 0. The zero quaternion maps to the identity.
inline Quat canonicalize(Quat q) {
  const double n = norm(q);
  if (!(n > 1e-12)) return {1.0, 0.0, 0.0, 0.0};
  const double s = (q[0] < 0.0 ? -1.0 : 1.0) / n;
  for (double& c : q) c *= s;
  return q;
}

inline Quat quat_multiply(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

inline Quat axis_angle(const Vec3& axis, double angle) {
  const double n = norm(axis);
  const double s = std::sin(angle / 2.0) / n;
  return {std::cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s};
}

inline Mat3 rotation_matrix(const Quat& q_in) {
  const Quat q = canonicalize(q_in);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

inline Vec3 rotate(const Mat3& r, const Vec3& v) {
  return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
          r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
          r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

/// Intrinsic X-Y-Z Euler angles (radians): R = Rx(rx) * Ry(ry) * Rz(rz).
inline Vec3 euler_xyz(const Quat& q) {
  const Mat3 r = rotation_matrix(q);
  const double ry = std::asin(std::clamp(r[0][2], -1.0, 1.0));
  const double rx = std::atan2(-r[1][2], r[2][2]);
  const double rz = std::atan2(-r[0][1], r[0][0]);
  return {rx, ry, rz};
}

inline Quat from_euler_xyz(const Vec3& e) {
  const Quat qx = axis_angle({1, 0, 0}, e[0]);
  const Quat qy = axis_angle({0, 1, 0}, e[1]);
  const Quat qz = axis_angle({0, 0, 1}, e[2]);
  return canonicalize(quat_multiply(quat_multiply(qx, qy), qz));
}

/// Wraps an angle difference into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kPi = 3.14159265358979323846;
  a = std::remainder(a, 2.0 * kPi);
  return a <= -kPi ? a + 2.0 * kPi : a;
}

inline double translation_error(const Pose& a, const Pose& b) {
  return norm(Vec3{a.translation[0] - b.translation[0], a.translation[1] - b.translation[1],
                   a.translation[2] - b.translation[2]});
}

inline double rotation_error(const Pose& a, const Pose& b) {
  return norm(Quat{a.rotation[0] - b.rotation[0], a.rotation[1] - b.rotation[1],
                   a.rotation[2] - b.rotation[2], a.rotation[3] - b.rotation[3]});
}

/// Splits a raw 7-vector (tx,ty,tz,qw,qx,qy,qz) into a canonical pose.
template <typename It>
Pose pose_from_raw(It first) {
  Pose p;
  for (int i = 0; i < 3; ++i) p.translation[i] = static_cast<double>(first[i]);
  p.rotation = canonicalize({static_cast<double>(first[3]), static_cast<double>(first[4]),
                             static_cast<double>(first[5]), static_cast<double>(first[6])});
  return p;
}

}  // namespace cpose
