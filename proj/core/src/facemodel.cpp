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
#include "headpose/facemodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "headpose/data.hpp"
#include "headpose/error.hpp"
#include "headpose/rng.hpp"

namespace headpose {

void DeformableModel::validate() const {
  const int v = vertex_count();
  if (v < kLandmarkCount) throw ValidationError("deformable model needs at least 68 vertices");
  if (basis.rows() != 3 * v || basis.cols() != kShapeDim)
    throw ValidationError("deformable model basis must be (3V) x 50");
  if (static_cast<int>(landmark_indices.size()) != kLandmarkCount)
    throw ValidationError("deformable model needs exactly 68 landmark indices");
  for (int idx : landmark_indices)
    if (idx < 0 || idx >= v) throw ValidationError("landmark index out of range");
  if (face_section_ids.empty()) throw ValidationError("face section is empty");
  for (int idx : face_section_ids)
    if (idx < 0 || idx >= v) throw ValidationError("face section index out of range");
}

Vertices reconstruct(const DeformableModel& model, const ShapeCoeffs& coeffs) {
  const Eigen::VectorXd offsets = model.basis * coeffs;
  Vertices out = model.base;
  out += Eigen::Map<const Vertices>(offsets.data(), model.vertex_count(), 3);
  return out;
}

Vertices transform_project(const Vertices& vertices, const Pose& pose) {
  const Eigen::Matrix3d r = pose.s * to_rotation_matrix(pose.q);
  Vertices out = vertices * r.transpose();
  out.col(0).array() += pose.tx;
  out.col(1).array() += pose.ty;
  return out;
}

namespace {

Eigen::Vector3d model_vertex(const DeformableModel& model, int idx, const ShapeCoeffs& coeffs) {
  Eigen::Vector3d v = model.base.row(idx).transpose();
  v += model.basis.middleRows(3 * idx, 3) * coeffs;
  return v;
}

}  // namespace

Landmarks landmarks68(const DeformableModel& model, const ShapeCoeffs& coeffs, const Pose& pose) {
  const Eigen::Matrix3d r = pose.s * to_rotation_matrix(pose.q);
  const Eigen::Vector3d t(pose.tx, pose.ty, 0.0);
  Landmarks out;
  for (int i = 0; i < kLandmarkCount; ++i) {
    const Eigen::Vector3d v = model_vertex(model, model.landmark_indices[i], coeffs);
    out.row(i) = (r * v + t).transpose();
  }
  return out;
}

LandmarkBackward landmarks68_backward(const DeformableModel& model, const ShapeCoeffs& coeffs,
                                      const Pose& pose, const Landmarks& grad) {
  const Eigen::Matrix3d rot = to_rotation_matrix(pose.q);
  const auto drot = rotation_matrix_derivatives(pose.q);
  LandmarkBackward out;
  Eigen::Matrix3d grad_rot = Eigen::Matrix3d::Zero();
  for (int i = 0; i < kLandmarkCount; ++i) {
    const int idx = model.landmark_indices[i];
    const Eigen::Vector3d v = model_vertex(model, idx, coeffs);
    const Eigen::Vector3d g = grad.row(i).transpose();
    out.dtx += g[0];
    out.dty += g[1];
    out.ds += g.dot(rot * v);
    grad_rot += pose.s * g * v.transpose();
    out.dphi += model.basis.middleRows(3 * idx, 3).transpose() * (pose.s * rot.transpose() * g);
  }
  for (int k = 0; k < 4; ++k) out.dq[k] = (drot[k].array() * grad_rot.array()).sum();
  return out;
}

Box bbox_from_mesh(const DeformableModel& model, const ShapeCoeffs& coeffs, const Pose& pose) {
  const Eigen::Matrix3d r = pose.s * to_rotation_matrix(pose.q);
  double x0 = std::numeric_limits<double>::infinity();
  double y0 = x0;
  double x1 = -x0;
  double y1 = -x0;
  for (int idx : model.face_section_ids) {
    const Eigen::Vector3d p = r * model_vertex(model, idx, coeffs);
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  return Box::from_corners(x0 + pose.tx, y0 + pose.ty, x1 + pose.tx, y1 + pose.ty);
}

Eigen::Matrix<double, kLandmarkCount, 3, Eigen::RowMajor> landmark_normals(
    const DeformableModel& model) {
  constexpr int kNeighbours = 12;
  const int v = model.vertex_count();
  const Eigen::RowVector3d centroid = model.base.colwise().mean();
  Eigen::Matrix<double, kLandmarkCount, 3, Eigen::RowMajor> normals;
  std::vector<std::pair<double, int>> dist(v);
  for (int i = 0; i < kLandmarkCount; ++i) {
    const Eigen::RowVector3d p = model.base.row(model.landmark_indices[i]);
    for (int j = 0; j < v; ++j) dist[j] = {(model.base.row(j) - p).squaredNorm(), j};
    const int k = std::min(kNeighbours, v);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
    for (int j = 0; j < k; ++j) mean += model.base.row(dist[j].second);
    mean /= k;
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (int j = 0; j < k; ++j) {
      const Eigen::Vector3d d = (model.base.row(dist[j].second) - mean).transpose();
      scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    Eigen::RowVector3d n = eig.eigenvectors().col(0).transpose();
    if (n.dot(p - centroid) < 0.0) n = -n;
    normals.row(i) = n.normalized();
  }
  return normals;
}

const std::array<int, kLandmarkCount>& landmark_mirror_permutation() {
  static const std::array<int, kLandmarkCount> table = [] {
    std::array<int, kLandmarkCount> t{};
    std::iota(t.begin(), t.end(), 0);
    auto pair = [&t](int a, int b) {
      t[a] = b;
      t[b] = a;
    };
    for (int i = 0; i < 8; ++i) pair(i, 16 - i);   // jaw
    for (int i = 0; i < 5; ++i) pair(17 + i, 26 - i);  // brows
    pair(31, 35);
    pair(32, 34);
    pair(36, 45);
    pair(37, 44);
    pair(38, 43);
    pair(39, 42);
    pair(40, 47);
    pair(41, 46);
    pair(48, 54);
    pair(49, 53);
    pair(50, 52);
    pair(55, 59);
    pair(56, 58);
    pair(60, 64);
    pair(61, 63);
    pair(65, 67);
    return t;
  }();
  return table;
}

namespace {

// Landmark template as (longitude, latitude) in degrees on the head
// ellipsoid. Longitude 0 faces the camera, positive latitude is downwards.
std::array<std::array<double, 2>, kLandmarkCount> landmark_template() {
  std::array<std::array<double, 2>, kLandmarkCount> t{};
  for (int i = 0; i < 17; ++i) {
    const double lon = -40.0 + 5.0 * i;
    t[i] = {lon, 5.0 + 30.0 * std::cos(0.5 * kPi * lon / 40.0)};
  }
  for (int i = 0; i < 5; ++i) {
    t[17 + i] = {-32.0 + 6.5 * i, -22.0};
    t[26 - i] = {32.0 - 6.5 * i, -22.0};
  }
  for (int i = 0; i < 4; ++i) t[27 + i] = {0.0, -12.0 + 6.0 * i};
  t[31] = {-8.0, 12.0};
  t[32] = {-4.0, 12.5};
  t[33] = {0.0, 13.0};
  const std::array<std::array<double, 2>, 6> eye = {
      {{-26.0, -10.0}, {-21.0, -13.0}, {-15.0, -13.0}, {-10.0, -10.0}, {-15.0, -7.0}, {-21.0, -7.0}}};
  for (int i = 0; i < 6; ++i) t[36 + i] = eye[i];
  t[48] = {-14.0, 24.0};
  t[49] = {-9.0, 21.0};
  t[50] = {-4.0, 20.0};
  t[51] = {0.0, 21.0};
  t[57] = {0.0, 30.5};
  t[58] = {-4.0, 30.0};
  t[59] = {-9.0, 28.0};
  t[60] = {-11.0, 25.0};
  t[61] = {-4.0, 24.0};
  t[62] = {0.0, 24.0};
  t[66] = {0.0, 26.0};
  t[67] = {-4.0, 26.0};
  // Right-hand side by reflection.
  const auto& mirror = landmark_mirror_permutation();
  for (int i : {31, 32, 36, 37, 38, 39, 40, 41, 48, 49, 50, 58, 59, 60, 61, 67})
    t[mirror[i]] = {-t[i][0], t[i][1]};
  return t;
}

Eigen::Vector3d ellipsoid_point(double lon_deg, double lat_deg) {
  const double lon = deg2rad(lon_deg);
  const double lat = deg2rad(lat_deg);
  return {kSyntheticAxisX * std::cos(lat) * std::sin(lon), kSyntheticAxisY * std::sin(lat),
          -kSyntheticAxisZ * std::cos(lat) * std::cos(lon)};
}

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

DeformableModel synthetic_model(std::uint64_t seed) {
  constexpr int kRings = 18;
  constexpr int kLongitudes = 24;
  constexpr int kMonomials = 20;  // all monomials of degree <= 3 in 3 variables
  const int v = kRings * kLongitudes + kLandmarkCount;

  DeformableModel model;
  model.base.resize(v, 3);
  int row = 0;
  for (int r = 0; r < kRings; ++r) {
    const double lat = -80.0 + r * 160.0 / (kRings - 1);
    for (int j = 0; j < kLongitudes; ++j) {
      const double lon = j * 360.0 / kLongitudes;
      model.base.row(row++) = ellipsoid_point(lon, lat).transpose();
    }
  }
  const auto tmpl = landmark_template();
  for (int i = 0; i < kLandmarkCount; ++i) {
    model.landmark_indices.push_back(row);
    model.base.row(row++) = ellipsoid_point(tmpl[i][0], tmpl[i][1]).transpose();
  }
  model.base = model.base.unaryExpr(&round_to_float);

  for (int i = 0; i < v; ++i)
    if (model.base(i, 2) < 0.0) model.face_section_ids.push_back(i);

  // Each deformation is a smooth scalar field (cubic polynomial of the unit
  // direction) applied along the ellipsoid normal.
  SeededRng rng(seed);
  const double max_displacement = 0.015 * kSyntheticAxisX;
  model.basis.resize(3 * v, kShapeDim);
  for (int k = 0; k < kShapeDim; ++k) {
    std::array<double, kMonomials> c{};
    for (double& ci : c) ci = rng.normal();
    Eigen::VectorXd field(v);
    std::vector<Eigen::Vector3d> normal(v);
    for (int i = 0; i < v; ++i) {
      const Eigen::Vector3d p = model.base.row(i).transpose();
      const Eigen::Vector3d d(p[0] / kSyntheticAxisX, p[1] / kSyntheticAxisY, p[2] / kSyntheticAxisZ);
      int m = 0;
      double value = 0.0;
      for (int a = 0; a <= 3; ++a)
        for (int b = 0; a + b <= 3; ++b)
          for (int e = 0; a + b + e <= 3; ++e)
            value += c[m++] * std::pow(d[0], a) * std::pow(d[1], b) * std::pow(d[2], e);
      field[i] = value;
      normal[i] = Eigen::Vector3d(p[0] / (kSyntheticAxisX * kSyntheticAxisX),
                                  p[1] / (kSyntheticAxisY * kSyntheticAxisY),
                                  p[2] / (kSyntheticAxisZ * kSyntheticAxisZ))
                      .normalized();
    }
    const double amplitude = max_displacement * (1.0 - 0.5 * k / kShapeDim);
    const double scale = amplitude / field.cwiseAbs().maxCoeff();
    for (int i = 0; i < v; ++i)
      model.basis.block<3, 1>(3 * i, k) = (scale * field[i]) * normal[i];
  }
  model.basis = model.basis.unaryExpr(&round_to_float);
  return model;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, double value) {
  put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("model file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

}  // namespace

void save_model(const std::filesystem::path& path, const DeformableModel& model) {
  model.validate();
  std::ostringstream os(std::ios::binary);
  os.write("DFM1", 4);
  const int v = model.vertex_count();
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, kShapeDim);
  put_u32(os, kLandmarkCount);
  put_u32(os, static_cast<std::uint32_t>(model.face_section_ids.size()));
  for (int i = 0; i < v; ++i)
    for (int c = 0; c < 3; ++c) put_f32(os, model.base(i, c));
  for (int k = 0; k < kShapeDim; ++k)
    for (int r = 0; r < 3 * v; ++r) put_f32(os, model.basis(r, k));
  for (int idx : model.landmark_indices) put_u32(os, static_cast<std::uint32_t>(idx));
  for (int idx : model.face_section_ids) put_u32(os, static_cast<std::uint32_t>(idx));
  write_file_atomic(path, os.str());
}

DeformableModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open model file " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DFM1", 4) != 0)
    throw ValidationError("not a DFM1 model file: " + path.string());
  const std::uint32_t v = get_u32(is);
  const std::uint32_t k = get_u32(is);
  const std::uint32_t l = get_u32(is);
  const std::uint32_t f = get_u32(is);
  if (k != kShapeDim) throw ValidationError("model basis count must be 50");
  if (l != kLandmarkCount) throw ValidationError("model landmark count must be 68");
  if (v > (1u << 24) || f > v) throw ValidationError("implausible model header");

  DeformableModel model;
  model.base.resize(v, 3);
  for (std::uint32_t i = 0; i < v; ++i)
    for (int c = 0; c < 3; ++c) model.base(i, c) = get_f32(is);
  model.basis.resize(3 * v, kShapeDim);
  for (int b = 0; b < kShapeDim; ++b)
    for (std::uint32_t r = 0; r < 3 * v; ++r) model.basis(r, b) = get_f32(is);
  for (std::uint32_t i = 0; i < l; ++i) model.landmark_indices.push_back(static_cast<int>(get_u32(is)));
  for (std::uint32_t i = 0; i < f; ++i) model.face_section_ids.push_back(static_cast<int>(get_u32(is)));
  model.validate();
  return model;
}

}  // namespace headpose
