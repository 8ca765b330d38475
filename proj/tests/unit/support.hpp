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

// Reference computations shared by the tests. Everything here is written
// against Eigen or the standard library so that it does not reuse the code
// under test.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "headpose/facemodel.hpp"
#include "headpose/geometry.hpp"
#include "headpose/image.hpp"
#include "headpose/sample.hpp"

namespace testing {

inline Eigen::Quaterniond to_eigen(const headpose::Quaternion& q) { return {q.w, q.x, q.y, q.z}; }

inline headpose::Quaternion from_eigen(const Eigen::Quaterniond& q) { return {q.x(), q.y(), q.z(), q.w()}; }

inline Eigen::Matrix3d matrix_oracle(const headpose::Quaternion& q) {
  return to_eigen(q).normalized().toRotationMatrix();
}

/// Angle of R_a^T R_b from the trace.
inline double trace_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

inline headpose::Quaternion random_rotation(std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  Eigen::Vector4d v(n(gen), n(gen), n(gen), n(gen));
  v.normalize();
  return {v[0], v[1], v[2], v[3]};
}

inline Eigen::Vector3d random_axis(std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  Eigen::Vector3d v(n(gen), n(gen), n(gen));
  return v.normalized();
}

/// Rotation by `angle` radians about `axis`.
inline headpose::Quaternion axis_angle(const Eigen::Vector3d& axis, double angle) {
  return from_eigen(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
}

/// Multivariate normal negative log density.
inline double gaussian_nll_oracle(const Eigen::Vector3d& r, const Eigen::Matrix3d& cov) {
  const double det = cov.determinant();
  const double quad = r.dot(cov.inverse() * r);
  return 0.5 * quad + 0.5 * std::log(std::pow(2.0 * M_PI, 3) * det);
}

/// Landmarks pushed through `t`, then the optional quarter turn
/// (x, y) -> (-y, x) and reflection x -> -x, with depth scaled by the
/// isotropic scale of `t` and points relabelled by `perm` when mirrored.
inline headpose::Landmarks map_landmarks(const headpose::Landmarks& l, const headpose::Affine2D& t, bool mirror,
                                         bool quarter, const std::array<int, headpose::kLandmarkCount>& perm) {
  const double k = std::sqrt(std::abs(t.det()));
  headpose::Landmarks moved;
  for (int i = 0; i < headpose::kLandmarkCount; ++i) {
    Eigen::Vector2d p = t.m.leftCols<2>() * l.row(i).head<2>().transpose() + t.m.col(2);
    if (quarter) p = Eigen::Vector2d(-p[1], p[0]);
    if (mirror) p[0] = -p[0];
    moved.row(i) << p[0], p[1], k * l(i, 2);
  }
  if (!mirror) return moved;
  headpose::Landmarks out;
  for (int i = 0; i < headpose::kLandmarkCount; ++i) out.row(i) = moved.row(perm[i]);
  return out;
}

inline headpose::Pose pose_of(const headpose::SampleRecord& r) {
  return {*r.rotation, r.pos_size->x, r.pos_size->y, r.pos_size->s};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(HEADPOSE_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
