/**
 * Copyright 2026 The headpose Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "headpose/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "headpose/error.hpp"

namespace headpose {
namespace {

// Below this angle log/exp switch to their Taylor expansions.
constexpr double kSmallAngle = 1e-4;

Quaternion conjugate(const Quaternion& q) { return {-q.x, -q.y, -q.z, q.w}; }

}  // namespace

double Quaternion::norm() const { return std::sqrt(x * x + y * y + z * z + w * w); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  return {x / n, y / n, z / n, w / n};
}

Quaternion Quaternion::canonical() const { return w < 0.0 ? -*this : *this; }

double dot(const Quaternion& a, const Quaternion& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z + a.w * b.w;
}

double smoothclip(double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); }

double smoothclip_derivative(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }

Eigen::Vector4d raw_quaternion(std::span<const double, 4> z) {
  return {z[0], z[1], z[2], smoothclip(z[3])};
}

Quaternion quat_from_features(double z0, double z1, double z2, double z3) {
  const double w = smoothclip(z3);
  const double n = std::sqrt(z0 * z0 + z1 * z1 + z2 * z2 + w * w);
  return {z0 / n, z1 / n, z2 / n, w / n};
}

Quaternion quat_from_features(std::span<const double, 4> z) {
  return quat_from_features(z[0], z[1], z[2], z[3]);
}

Eigen::Matrix4d normalization_jacobian(const Eigen::Vector4d& qprime) {
  const double n = qprime.norm();
  const Eigen::Vector4d q = qprime / n;
  return (Eigen::Matrix4d::Identity() - q * q.transpose()) / n;
}

Eigen::Matrix4d quat_from_features_jacobian(std::span<const double, 4> z) {
  Eigen::Matrix4d jac = normalization_jacobian(raw_quaternion(z));
  jac.col(3) *= smoothclip_derivative(z[3]);
  return jac;
}

Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
  return {
      a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
      a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
      a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
      a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
  };
}

Quaternion quat_inverse(const Quaternion& q) {
  const double n2 = dot(q, q);
  const Quaternion c = conjugate(q);
  return {c.x / n2, c.y / n2, c.z / n2, c.w / n2};
}

RotationVector log_map(const Quaternion& q) {
  const Quaternion p = q.canonical();
  const double s = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  const double theta = 2.0 * std::atan2(s, p.w);
  double f;
  if (theta < kSmallAngle) {
    const double w2 = p.w * p.w;
    const double s2 = s * s;
    f = 2.0 / p.w - 2.0 * s2 / (3.0 * w2 * p.w) + 2.0 * s2 * s2 / (5.0 * w2 * w2 * p.w);
  } else {
    f = theta / s;
  }
  return {f * p.x, f * p.y, f * p.z};
}

Eigen::Matrix<double, 3, 4> log_map_jacobian(const Eigen::Vector4d& p_in) {
  const double sign = p_in[3] < 0.0 ? -1.0 : 1.0;
  const Eigen::Vector4d p = sign * p_in;
  const Eigen::Vector3d v = p.head<3>();
  const double w = p[3];
  const double s2 = v.squaredNorm();
  const double s = std::sqrt(s2);
  const double theta = 2.0 * std::atan2(s, w);

  double f;
  double df_ds_over_s;
  if (theta < kSmallAngle) {
    const double w2 = w * w;
    const double w3 = w2 * w;
    const double w5 = w3 * w2;
    f = 2.0 / w - 2.0 * s2 / (3.0 * w3) + 2.0 * s2 * s2 / (5.0 * w5);
    df_ds_over_s = -4.0 / (3.0 * w3) + 8.0 * s2 / (5.0 * w5);
  } else {
    f = theta / s;
    df_ds_over_s = (2.0 * w / (s2 + w * w) - f) / s2;
  }
  const double df_dw = -2.0 / (s2 + w * w);

  Eigen::Matrix<double, 3, 4> jac;
  jac.leftCols<3>() = f * Eigen::Matrix3d::Identity() + df_ds_over_s * v * v.transpose();
  jac.col(3) = df_dw * v;
  return sign * jac;
}

Quaternion exp_map(const RotationVector& rv) {
  const Eigen::Vector3d v = rv.vec();
  const double theta = v.norm();
  double k;  // sin(theta/2) / theta
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    k = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
  } else {
    k = std::sin(0.5 * theta) / theta;
  }
  return {k * v[0], k * v[1], k * v[2], std::cos(0.5 * theta)};
}

double geodesic_error(const Quaternion& qhat, const Quaternion& q) {
  return log_map(quat_mul(quat_inverse(qhat), q)).angle();
}

Eigen::Matrix3d to_rotation_matrix(const Quaternion& q) {
  const double x = q.x, y = q.y, z = q.z, w = q.w;
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
      2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
  return r;
}

std::array<Eigen::Matrix3d, 4> rotation_matrix_derivatives(const Quaternion& q) {
  const double x = q.x, y = q.y, z = q.z, w = q.w;
  std::array<Eigen::Matrix3d, 4> d;
  d[0] << 0, 2 * y, 2 * z,
          2 * y, -4 * x, -2 * w,
          2 * z, 2 * w, -4 * x;
  d[1] << -4 * y, 2 * x, 2 * w,
          2 * x, 0, 2 * z,
          -2 * w, 2 * z, -4 * y;
  d[2] << -4 * z, -2 * w, 2 * x,
          2 * w, -4 * z, 2 * y,
          2 * x, 2 * y, 0;
  d[3] << 0, -2 * z, 2 * y,
          2 * z, 0, -2 * x,
          -2 * y, 2 * x, 0;
  return d;
}

Quaternion from_rotation_matrix(const Eigen::Matrix3d& r) {
  // Shepperd: pick the largest of the four squared components for stability.
  const double tr = r.trace();
  Quaternion q;
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q = {(r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s, 0.25 * s};
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q = {0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s, (r(2, 1) - r(1, 2)) / s};
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q = {(r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s, (r(0, 2) - r(2, 0)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q = {(r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s, (r(1, 0) - r(0, 1)) / s};
  }
  return q.normalized().canonical();
}

EulerAngles to_euler(const Quaternion& q) {
  const Eigen::Matrix3d r = to_rotation_matrix(q.normalized());
  const double cos_pitch = std::hypot(r(1, 0), r(1, 1));
  const double pitch = std::atan2(-r(1, 2), cos_pitch);
  double yaw;
  double roll;
  if (cos_pitch < 1e-9) {
    // Gimbal lock: only yaw +- roll is observable; put it all into yaw.
    roll = 0.0;
    yaw = std::atan2(-r(2, 0), r(0, 0));
  } else {
    yaw = std::atan2(r(0, 2), r(2, 2));
    roll = std::atan2(r(1, 0), r(1, 1));
  }
  return {rad2deg(yaw), rad2deg(pitch), rad2deg(roll)};
}

Quaternion from_euler(const EulerAngles& e) {
  const double hy = 0.5 * deg2rad(e.yaw);
  const double hp = 0.5 * deg2rad(e.pitch);
  const double hr = 0.5 * deg2rad(e.roll);
  const Quaternion qy{0.0, std::sin(hy), 0.0, std::cos(hy)};
  const Quaternion qp{std::sin(hp), 0.0, 0.0, std::cos(hp)};
  const Quaternion qr{0.0, 0.0, std::sin(hr), std::cos(hr)};
  return quat_mul(quat_mul(qy, qp), qr).canonical();
}

Eigen::Matrix3d lower_triangular_from_features(std::span<const double, 6> m) {
  Eigen::Matrix3d l = Eigen::Matrix3d::Zero();
  l(0, 0) = m[0];
  l(1, 0) = m[1];
  l(1, 1) = m[2];
  l(2, 0) = m[3];
  l(2, 1) = m[4];
  l(2, 2) = m[5];
  return l;
}

Covariance3 covariance_from_features(std::span<const double, 6> m, double eps) {
  const Eigen::Matrix3d l = lower_triangular_from_features(m);
  Covariance3 cov;
  cov.matrix = l * l.transpose() + eps * Eigen::Matrix3d::Identity();
  return cov;
}

Quaternion mean_quaternion(std::span<const Quaternion> qs) {
  if (qs.empty()) throw ValidationError("mean_quaternion: empty input");
  const Eigen::Vector4d ref = qs.front().vec();
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  for (const Quaternion& q : qs) {
    const Eigen::Vector4d v = q.vec();
    acc += v.dot(ref) < 0.0 ? Eigen::Vector4d(-v) : v;
  }
  acc /= static_cast<double>(qs.size());
  const double n = acc.norm();
  if (n < 1e-12) throw ValidationError("mean_quaternion: aligned average has vanishing norm");
  return Quaternion::from_vec(acc / n);
}

}  // namespace headpose
