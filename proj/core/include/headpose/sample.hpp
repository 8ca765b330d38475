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
#include <optional>
#include <string>

#include <Eigen/Core>

#include "headpose/geometry.hpp"

namespace headpose {

inline constexpr int kShapeDim = 50;
inline constexpr int kLandmarkCount = 68;

/// 68 landmarks, one row per point: x, y in image units, z along the view axis.
using Landmarks = Eigen::Matrix<double, kLandmarkCount, 3, Eigen::RowMajor>;
using ShapeCoeffs = Eigen::Matrix<double, kShapeDim, 1>;

/// Position (x, y) and head size s in normalized image units.
struct PosSize {
  double x = 0.0;
  double y = 0.0;
  double s = 1.0;

  Eigen::Vector3d vec() const { return {x, y, s}; }
};

/// Axis-aligned box given by center and size.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  /// (x0, y0, x1, y1)
  std::array<double, 4> corners() const {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
};

struct LabelMask {
  bool rotation = false;
  bool position_size = false;
  bool shape = false;
  bool landmarks3d = false;
  bool landmarks2d_only = false;
  bool bbox = false;

  bool any() const {
    return rotation || position_size || shape || landmarks3d || landmarks2d_only || bbox;
  }
  bool operator==(const LabelMask&) const = default;
};

/// Ground truth or prediction for one image. Optional fields are absent when
/// the corresponding label group is not available; the mask follows presence.
struct SampleRecord {
  std::string id;
  std::optional<Quaternion> rotation;
  std::optional<PosSize> pos_size;
  std::optional<ShapeCoeffs> shape;
  std::optional<Landmarks> landmarks;
  /// Only x and y of `landmarks` carry information.
  bool landmarks_2d = false;
  std::optional<Box> bbox;
  std::optional<std::array<double, 6>> rot_cov_features;
  std::optional<std::array<double, 6>> pos_cov_features;

  LabelMask mask() const {
    LabelMask m;
    m.rotation = rotation.has_value();
    m.position_size = pos_size.has_value();
    m.shape = shape.has_value();
    m.landmarks3d = landmarks.has_value() && !landmarks_2d;
    m.landmarks2d_only = landmarks.has_value() && landmarks_2d;
    m.bbox = bbox.has_value();
    return m;
  }
};

}  // namespace headpose
