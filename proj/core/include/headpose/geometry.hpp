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
#pragma once

#include <array>
#include <span>

#include <Eigen/Core>

namespace headpose {

/// Quaternion stored in (x, y, z, w) order, w being the real part.
struct Quaternion {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 1.0;

  static constexpr Quaternion identity() { return {0.0, 0.0, 0.0, 1.0}; }
  static Quaternion from_vec(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }

  Eigen::Vector4d vec() const { return {x, y, z, w}; }
  double norm() const;
  Quaternion normalized() const;
  /// Representative with w >= 0.
  Quaternion canonical() const;

  Quaternion operator-() const { return {-x, -y, -z, -w}; }
  bool operator==(const Quaternion&) const = default;
};

double dot(const Quaternion& a, const Quaternion& b);

/// Full-angle rotation vector: direction is the axis, magnitude the angle in radians.
struct RotationVector {
  double rx = 0.0;
  double ry = 0.0;
  double rz = 0.0;

  static RotationVector from_vec(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
  Eigen::Vector3d vec() const { return {rx, ry, rz}; }
  double angle() const { return vec().norm(); }
};

/// Degrees. R = R_y(yaw) * R_x(pitch) * R_z(roll) in the camera frame
/// (x right, y down, z into the image).
struct EulerAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

/// Symmetric positive-definite 3x3 covariance.
struct Covariance3 {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
};

inline constexpr double kDefaultCovarianceEps = 1e-4;
inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// ELU(x) + 1. Maps the reals onto the positive reals.
double smoothclip(double x);
double smoothclip_derivative(double x);

/// q = q'/|q'| with q' = (z0, z1, z2, smoothclip(z3)).
Quaternion quat_from_features(double z0, double z1, double z2, double z3);
Quaternion quat_from_features(std::span<const double, 4> z);
/// d q / d z, 4x4, rows indexed by (x, y, z, w).
Eigen::Matrix4d quat_from_features_jacobian(std::span<const double, 4> z);

/// Unnormalized quaternion q' built from the raw features.
Eigen::Vector4d raw_quaternion(std::span<const double, 4> z);

/// Jacobian of q'/|q'| with respect to q'.
Eigen::Matrix4d normalization_jacobian(const Eigen::Vector4d& qprime);

/// Hamilton product.
Quaternion quat_mul(const Quaternion& a, const Quaternion& b);
Quaternion quat_inverse(const Quaternion& q);

RotationVector log_map(const Quaternion& q);
Quaternion exp_map(const RotationVector& v);

/// d log_map(p) / d p for a (not necessarily unit) quaternion 4-vector p.
/// log_map is invariant to positive scaling of p, and the Jacobian is that
/// of the scale-invariant extension.
Eigen::Matrix<double, 3, 4> log_map_jacobian(const Eigen::Vector4d& p);

/// Angle of the relative rotation, radians in [0, pi].
double geodesic_error(const Quaternion& qhat, const Quaternion& q);

Eigen::Matrix3d to_rotation_matrix(const Quaternion& q);
/// Partial derivatives of the rotation-matrix polynomial with respect to
/// (x, y, z, w). Valid as a tangent derivative for unit quaternions.
std::array<Eigen::Matrix3d, 4> rotation_matrix_derivatives(const Quaternion& q);
Quaternion from_rotation_matrix(const Eigen::Matrix3d& r);

EulerAngles to_euler(const Quaternion& q);
Quaternion from_euler(const EulerAngles& e);

/// Lower-triangular M filled row-major: (0,0) (1,0) (1,1) (2,0) (2,1) (2,2).
Eigen::Matrix3d lower_triangular_from_features(std::span<const double, 6> m);
/// Sigma = M M^T + eps I.
Covariance3 covariance_from_features(std::span<const double, 6> m,
                                     double eps = kDefaultCovarianceEps);

/// Hemisphere-aligned component average, renormalized. Throws
/// ValidationError on an empty input or a degenerate average.
Quaternion mean_quaternion(std::span<const Quaternion> qs);

}  // namespace headpose
