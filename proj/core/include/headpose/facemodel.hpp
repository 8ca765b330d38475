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
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "headpose/geometry.hpp"
#include "headpose/sample.hpp"

namespace headpose {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Linear deformable face model: vertices = base + basis * coeffs.
struct DeformableModel {
  Vertices base;
  /// (3 V) x kShapeDim; column k is deformation vector k, flattened per vertex.
  Eigen::MatrixXd basis;
  std::vector<int> landmark_indices;
  std::vector<int> face_section_ids;

  int vertex_count() const { return static_cast<int>(base.rows()); }
  /// Throws ValidationError when an invariant does not hold.
  void validate() const;
};

/// Orthographic camera pose: p = s R(q) v + (tx, ty, 0).
struct Pose {
  Quaternion q;
  double tx = 0.0;
  double ty = 0.0;
  double s = 1.0;
};

Vertices reconstruct(const DeformableModel& model, const ShapeCoeffs& coeffs);
Vertices transform_project(const Vertices& vertices, const Pose& pose);
Landmarks landmarks68(const DeformableModel& model, const ShapeCoeffs& coeffs, const Pose& pose);

/// Gradient of a scalar through landmarks68 given dL/d(landmarks).
/// `dq` is the derivative with respect to the quaternion components taken
/// through the rotation-matrix polynomial (tangent-correct for unit q).
struct LandmarkBackward {
  Eigen::Vector4d dq = Eigen::Vector4d::Zero();
  double dtx = 0.0;
  double dty = 0.0;
  double ds = 0.0;
  ShapeCoeffs dphi = ShapeCoeffs::Zero();
};
LandmarkBackward landmarks68_backward(const DeformableModel& model, const ShapeCoeffs& coeffs,
                                      const Pose& pose, const Landmarks& grad_landmarks);

/// Image-plane box around the projected facial section.
Box bbox_from_mesh(const DeformableModel& model, const ShapeCoeffs& coeffs, const Pose& pose);

/// Unit outward normals of the landmark vertices of the base shape, estimated
/// from the local vertex neighbourhood.
Eigen::Matrix<double, kLandmarkCount, 3, Eigen::RowMajor> landmark_normals(
    const DeformableModel& model);

/// Left/right correspondence of the 68-point markup.
const std::array<int, kLandmarkCount>& landmark_mirror_permutation();

/// Procedural, left-right symmetric ellipsoidal head. Values are rounded to
/// float precision so that a save/load round-trip is exact.
DeformableModel synthetic_model(std::uint64_t seed);

/// Semi-axes of the synthetic head (model units).
inline constexpr double kSyntheticAxisX = 0.75;
inline constexpr double kSyntheticAxisY = 1.0;
inline constexpr double kSyntheticAxisZ = 0.85;

void save_model(const std::filesystem::path& path, const DeformableModel& model);
DeformableModel load_model(const std::filesystem::path& path);

}  // namespace headpose
