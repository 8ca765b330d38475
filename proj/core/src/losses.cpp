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
#include "headpose/losses.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>

#include "headpose/error.hpp"

namespace headpose {
namespace {

const double kLog2Pi = std::log(2.0 * kPi);

template <int N, int R>
std::span<const double, N> segment(const Eigen::Matrix<double, R, 1>& v, int offset) {
  return std::span<const double, N>(v.data() + offset, N);
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

struct Gaussian3 {
  double value;
  Eigen::Vector3d grad_residual;
  Eigen::Matrix3d grad_cov;  // symmetric
};

// -log N(r | 0, cov) with gradients in r and cov.
Gaussian3 gaussian_nll3(const Eigen::Vector3d& r, const Eigen::Matrix3d& cov) {
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success) throw ValidationError("covariance is not positive-definite");
  const Eigen::Matrix3d l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const Eigen::Vector3d a = llt.solve(r);
  const Eigen::Matrix3d inv = llt.solve(Eigen::Matrix3d::Identity());
  Gaussian3 out;
  out.value = 0.5 * (r.dot(a) + log_det + 3.0 * kLog2Pi);
  out.grad_residual = a;
  out.grad_cov = 0.5 * (inv - a * a.transpose());
  return out;
}

// d/dm of a function of Sigma = M M^T + eps I, given d/dSigma (symmetric).
Eigen::Matrix<double, 6, 1> covariance_feature_grad(const Eigen::Matrix3d& grad_cov,
                                                    std::span<const double, 6> m) {
  const Eigen::Matrix3d gm = 2.0 * grad_cov * lower_triangular_from_features(m);
  Eigen::Matrix<double, 6, 1> out;
  out << gm(0, 0), gm(1, 0), gm(1, 1), gm(2, 0), gm(2, 1), gm(2, 2);
  return out;
}

// Linear map A(q) with conj(qhat) (x) q = A(q) * qhat.
Eigen::Matrix4d left_conjugate_product_matrix(const Quaternion& q) {
  Eigen::Matrix4d a;
  for (int k = 0; k < 4; ++k) {
    Eigen::Vector4d e = Eigen::Vector4d::Zero();
    e[k] = 1.0;
    const Quaternion conj_e{-e[0], -e[1], -e[2], e[3]};
    a.col(k) = quat_mul(conj_e, q).vec();
  }
  return a;
}

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << what << ": size mismatch (" << a.size() << " vs " << b.size() << ")";
    throw ValidationError(os.str());
  }
}

int landmark_dims(bool two_d) { return two_d ? 2 : 3; }

}  // namespace

void LossWeights::validate() const {
  for (double v : {alpha_rot, alpha_p, alpha_phi, alpha_xi, alpha_bb, alpha_norm, beta_total,
                   beta_rot, beta_p, beta_phi, beta_xi, beta_bb})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError("loss weights must be finite and non-negative");
}

LandmarkWeights default_landmark_weights() {
  LandmarkWeights w;
  w.fill(1.0);
  for (int i : {37, 38, 40, 41, 43, 44, 46, 47}) w[i] = 0.0;
  return w;
}

double positive_scale(double raw) { return smoothclip(raw) + kScaleFloor; }

double rot_loss(const Quaternion& qhat, const Quaternion& q) {
  const double d = dot(qhat, q);
  return 1.0 - d * d;
}

double rot_nll(const Quaternion& qhat, const Quaternion& q, const Covariance3& cov) {
  const Eigen::Vector3d r = log_map(quat_mul(quat_inverse(qhat), q)).vec();
  return gaussian_nll3(r, cov.matrix).value;
}

double pos_size_loss(const PosSize& phat, const PosSize& p) {
  return (p.vec() - phat.vec()).squaredNorm();
}

double pos_size_nll(const PosSize& phat, const PosSize& p, const Covariance3& cov) {
  return gaussian_nll3(p.vec() - phat.vec(), cov.matrix).value;
}

double shape_loss(std::span<const double> phihat, std::span<const double> phi) {
  require_same_size(phihat, phi, "shape_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) acc += (phi[i] - phihat[i]) * (phi[i] - phihat[i]);
  return acc;
}

double shape_nll(std::span<const double> phihat, std::span<const double> phi,
                 std::span<const double> sigma) {
  require_same_size(phihat, phi, "shape_nll");
  require_same_size(sigma, phi, "shape_nll");
  double acc = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw ValidationError("shape_nll: sigma must be positive");
    const double d = (phi[i] - phihat[i]) / sigma[i];
    acc += 0.5 * (d * d + kLog2Pi) + std::log(sigma[i]);
  }
  return acc;
}

double landmark_loss(const Landmarks& xihat, const Landmarks& xi, const LandmarkWeights& w,
                     bool two_d) {
  const int dims = landmark_dims(two_d);
  double acc = 0.0;
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < dims; ++c) acc += w[i] * std::abs(xi(i, c) - xihat(i, c));
  return acc;
}

double landmark_nll(const Landmarks& xihat, const Landmarks& xi, const Landmarks& scale,
                    const LandmarkWeights& w, bool two_d) {
  const int dims = landmark_dims(two_d);
  double acc = 0.0;
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < dims; ++c) {
      const double b = scale(i, c);
      if (!(b > 0.0)) throw ValidationError("landmark_nll: scale must be positive");
      acc += w[i] * (std::log(2.0 * b) + std::abs(xi(i, c) - xihat(i, c)) / b);
    }
  return acc;
}

double bbox_loss(const Box& bhat, const Box& b) {
  const auto ch = bhat.corners();
  const auto c = b.corners();
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) acc += (ch[i] - c[i]) * (ch[i] - c[i]);
  return acc;
}

double bbox_nll(const Box& bhat, const Box& b, std::span<const double, 4> sigma) {
  const auto ch = bhat.corners();
  const auto c = b.corners();
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (!(sigma[i] > 0.0)) throw ValidationError("bbox_nll: sigma must be positive");
    const double d = (ch[i] - c[i]) / sigma[i];
    acc += 0.5 * (d * d + kLog2Pi) + std::log(sigma[i]);
  }
  return acc;
}

double quat_norm_penalty(const Eigen::Vector4d& qprime) {
  const double d = 1.0 - qprime.norm();
  return d * d;
}

LossGrad rot_loss_grad(std::span<const double, 4> z, const Quaternion& q) {
  const Quaternion qhat = quat_from_features(z);
  const double d = dot(qhat, q);
  LossGrad out;
  out.value = 1.0 - d * d;
  out.grad = quat_from_features_jacobian(z).transpose() * (-2.0 * d * q.vec());
  return out;
}

LossGrad rot_nll_grad(std::span<const double, 4> z, std::span<const double, 6> m,
                      const Quaternion& q, double eps) {
  const Quaternion qhat = quat_from_features(z);
  const Eigen::Matrix4d a = left_conjugate_product_matrix(q);
  const Eigen::Vector4d p = a * qhat.vec();
  const Eigen::Vector3d r = log_map(Quaternion::from_vec(p)).vec();
  const Covariance3 cov = covariance_from_features(m, eps);
  const Gaussian3 g = gaussian_nll3(r, cov.matrix);

  const Eigen::Matrix<double, 3, 4> dr_dz = log_map_jacobian(p) * a * quat_from_features_jacobian(z);
  LossGrad out;
  out.value = g.value;
  out.grad.resize(10);
  out.grad.head<4>() = dr_dz.transpose() * g.grad_residual;
  out.grad.tail<6>() = covariance_feature_grad(g.grad_cov, m);
  return out;
}

PosSize pos_size_from_features(std::span<const double, 3> f) {
  return {f[0], f[1], smoothclip(f[2])};
}

LossGrad pos_size_loss_grad(std::span<const double, 3> f, const PosSize& p) {
  const Eigen::Vector3d diff = pos_size_from_features(f).vec() - p.vec();
  LossGrad out;
  out.value = diff.squaredNorm();
  out.grad = 2.0 * diff;
  out.grad[2] *= smoothclip_derivative(f[2]);
  return out;
}

LossGrad pos_size_nll_grad(std::span<const double, 3> f, std::span<const double, 6> m,
                           const PosSize& p, double eps) {
  const Eigen::Vector3d r = p.vec() - pos_size_from_features(f).vec();
  const Gaussian3 g = gaussian_nll3(r, covariance_from_features(m, eps).matrix);
  LossGrad out;
  out.value = g.value;
  out.grad.resize(9);
  out.grad.head<3>() = -g.grad_residual;
  out.grad[2] *= smoothclip_derivative(f[2]);
  out.grad.tail<6>() = covariance_feature_grad(g.grad_cov, m);
  return out;
}

LossGrad shape_loss_grad(std::span<const double> phihat, std::span<const double> phi) {
  require_same_size(phihat, phi, "shape_loss");
  LossGrad out;
  out.grad.resize(static_cast<Eigen::Index>(phi.size()));
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double d = phihat[i] - phi[i];
    out.value += d * d;
    out.grad[static_cast<Eigen::Index>(i)] = 2.0 * d;
  }
  return out;
}

LossGrad shape_nll_grad(std::span<const double> phihat, std::span<const double> sigma_raw,
                        std::span<const double> phi) {
  require_same_size(phihat, phi, "shape_nll");
  require_same_size(sigma_raw, phi, "shape_nll");
  const auto n = static_cast<Eigen::Index>(phi.size());
  LossGrad out;
  out.grad.resize(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sigma = positive_scale(sigma_raw[i]);
    const double d = phihat[i] - phi[i];
    const double inv2 = 1.0 / (sigma * sigma);
    out.value += 0.5 * (d * d * inv2 + kLog2Pi) + std::log(sigma);
    out.grad[i] = d * inv2;
    out.grad[n + i] = (1.0 / sigma - d * d * inv2 / sigma) * smoothclip_derivative(sigma_raw[i]);
  }
  return out;
}

LossGrad landmark_loss_grad(const Landmarks& xihat, const Landmarks& xi, const LandmarkWeights& w,
                            bool two_d) {
  const int dims = landmark_dims(two_d);
  LossGrad out;
  out.grad = Eigen::VectorXd::Zero(3 * kLandmarkCount);
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < dims; ++c) {
      const double d = xihat(i, c) - xi(i, c);
      out.value += w[i] * std::abs(d);
      out.grad[3 * i + c] = w[i] * sign(d);
    }
  return out;
}

LossGrad landmark_nll_grad(const Landmarks& xihat, const Landmarks& scale_raw, const Landmarks& xi,
                           const LandmarkWeights& w, bool two_d) {
  const int dims = landmark_dims(two_d);
  constexpr int n = 3 * kLandmarkCount;
  LossGrad out;
  out.grad = Eigen::VectorXd::Zero(2 * n);
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < dims; ++c) {
      const double b = positive_scale(scale_raw(i, c));
      const double d = xihat(i, c) - xi(i, c);
      out.value += w[i] * (std::log(2.0 * b) + std::abs(d) / b);
      out.grad[3 * i + c] = w[i] * sign(d) / b;
      out.grad[n + 3 * i + c] =
          w[i] * (1.0 / b - std::abs(d) / (b * b)) * smoothclip_derivative(scale_raw(i, c));
    }
  return out;
}

Box box_from_features(std::span<const double, 4> z) {
  return {z[0], z[1], smoothclip(z[2]), smoothclip(z[3])};
}

namespace {

// d corners / d z
Eigen::Matrix4d box_corner_jacobian(std::span<const double, 4> z) {
  const double dw = 0.5 * smoothclip_derivative(z[2]);
  const double dh = 0.5 * smoothclip_derivative(z[3]);
  Eigen::Matrix4d j;
  j << 1, 0, -dw, 0,
       0, 1, 0, -dh,
       1, 0, dw, 0,
       0, 1, 0, dh;
  return j;
}

}  // namespace

LossGrad bbox_loss_grad(std::span<const double, 4> z, const Box& b) {
  const auto ch = box_from_features(z).corners();
  const auto c = b.corners();
  Eigen::Vector4d d;
  for (int i = 0; i < 4; ++i) d[i] = ch[i] - c[i];
  LossGrad out;
  out.value = d.squaredNorm();
  out.grad = box_corner_jacobian(z).transpose() * (2.0 * d);
  return out;
}

LossGrad bbox_nll_grad(std::span<const double, 4> z, std::span<const double, 4> sigma_raw,
                       const Box& b) {
  const auto ch = box_from_features(z).corners();
  const auto c = b.corners();
  Eigen::Vector4d grad_corner;
  LossGrad out;
  out.grad.resize(8);
  for (int i = 0; i < 4; ++i) {
    const double sigma = positive_scale(sigma_raw[i]);
    const double d = ch[i] - c[i];
    const double inv2 = 1.0 / (sigma * sigma);
    out.value += 0.5 * (d * d * inv2 + kLog2Pi) + std::log(sigma);
    grad_corner[i] = d * inv2;
    out.grad[4 + i] = (1.0 / sigma - d * d * inv2 / sigma) * smoothclip_derivative(sigma_raw[i]);
  }
  out.grad.head<4>() = box_corner_jacobian(z).transpose() * grad_corner;
  return out;
}

LossGrad quat_norm_penalty_grad(std::span<const double, 4> z) {
  const Eigen::Vector4d qp = raw_quaternion(z);
  const double n = qp.norm();
  LossGrad out;
  out.value = (1.0 - n) * (1.0 - n);
  out.grad = (-2.0 * (1.0 - n) / n) * qp;
  out.grad[3] *= smoothclip_derivative(z[3]);
  return out;
}

Eigen::VectorXd AuxParams::flatten() const {
  Eigen::VectorXd v(kSize);
  v.head<kShapeDim>() = shape_sigma_raw;
  v.segment<3 * kLandmarkCount>(kShapeDim) =
      Eigen::Map<const Eigen::Matrix<double, 3 * kLandmarkCount, 1>>(landmark_scale_raw.data());
  v.tail<4>() = bbox_sigma_raw;
  return v;
}

AuxParams AuxParams::unflatten(const Eigen::VectorXd& v) {
  if (v.size() != kSize) throw ValidationError("auxiliary parameter vector has wrong size");
  AuxParams a;
  a.shape_sigma_raw = v.head<kShapeDim>();
  Eigen::Map<Eigen::Matrix<double, 3 * kLandmarkCount, 1>>(a.landmark_scale_raw.data()) =
      v.segment<3 * kLandmarkCount>(kShapeDim);
  a.bbox_sigma_raw = v.tail<4>();
  return a;
}

Pose pose_from_head(const HeadOutput& raw) {
  const PosSize p = pos_size_from_features(segment<3>(raw, head::kPosSize));
  return {quat_from_features(segment<4>(raw, head::kQuat)), p.x, p.y, p.s};
}

SampleRecord decode_head(const HeadOutput& raw, const DeformableModel* model,
                         const std::string& id) {
  SampleRecord rec;
  rec.id = id;
  rec.rotation = quat_from_features(segment<4>(raw, head::kQuat));
  rec.pos_size = pos_size_from_features(segment<3>(raw, head::kPosSize));
  rec.shape = raw.segment<kShapeDim>(head::kShape);
  rec.bbox = box_from_features(segment<4>(raw, head::kBox));
  std::array<double, 6> rot{}, pos{};
  for (int i = 0; i < 6; ++i) {
    rot[i] = raw[head::kRotCov + i];
    pos[i] = raw[head::kPosCov + i];
  }
  rec.rot_cov_features = rot;
  rec.pos_cov_features = pos;
  if (model != nullptr) rec.landmarks = landmarks68(*model, *rec.shape, pose_from_head(raw));
  return rec;
}

TotalLoss total_loss(std::span<const LossSample> batch, const AuxParams& aux,
                     const TotalLossOptions& options) {
  if (batch.empty()) throw ValidationError("total_loss: empty batch");
  const LossWeights& wt = options.weights;
  wt.validate();
  const double beta = wt.beta_total;
  const auto bsize = static_cast<double>(batch.size());

  TotalLoss out;
  out.grad_outputs.assign(batch.size(), HeadOutput::Zero());
  LossTerms& t = out.terms;
  double value = 0.0;

  for (std::size_t n = 0; n < batch.size(); ++n) {
    const HeadOutput& o = batch[n].output;
    if (batch[n].labels == nullptr) throw ValidationError("total_loss: sample without labels");
    const SampleRecord& lab = *batch[n].labels;
    if (!lab.mask().any()) throw ValidationError("total_loss: sample " + lab.id + " has no labels");
    HeadOutput& g = out.grad_outputs[n];
    const auto z = segment<4>(o, head::kQuat);
    const auto f = segment<3>(o, head::kPosSize);
    const auto zb = segment<4>(o, head::kBox);
    const auto mrot = segment<6>(o, head::kRotCov);
    const auto mpos = segment<6>(o, head::kPosCov);
    const std::span<const double> phihat(o.data() + head::kShape, kShapeDim);

    if (lab.rotation) {
      const LossGrad l = rot_loss_grad(z, *lab.rotation);
      const LossGrad nll = rot_nll_grad(z, mrot, *lab.rotation, options.eps);
      const LossGrad nrm = quat_norm_penalty_grad(z);
      t.rot += l.value;
      t.nll_rot += nll.value;
      t.norm += nrm.value;
      value += wt.alpha_rot * l.value + beta * wt.beta_rot * nll.value + wt.alpha_norm * nrm.value;
      g.segment<4>(head::kQuat) += wt.alpha_rot * l.grad + beta * wt.beta_rot * nll.grad.head<4>() +
                                   wt.alpha_norm * nrm.grad;
      g.segment<6>(head::kRotCov) += beta * wt.beta_rot * nll.grad.tail<6>();
    }
    if (lab.pos_size) {
      const LossGrad l = pos_size_loss_grad(f, *lab.pos_size);
      const LossGrad nll = pos_size_nll_grad(f, mpos, *lab.pos_size, options.eps);
      t.pos += l.value;
      t.nll_pos += nll.value;
      value += wt.alpha_p * l.value + beta * wt.beta_p * nll.value;
      g.segment<3>(head::kPosSize) += wt.alpha_p * l.grad + beta * wt.beta_p * nll.grad.head<3>();
      g.segment<6>(head::kPosCov) += beta * wt.beta_p * nll.grad.tail<6>();
    }
    if (lab.shape) {
      const std::span<const double> phi(lab.shape->data(), kShapeDim);
      const std::span<const double> sraw(aux.shape_sigma_raw.data(), kShapeDim);
      const LossGrad l = shape_loss_grad(phihat, phi);
      const LossGrad nll = shape_nll_grad(phihat, sraw, phi);
      t.shape += l.value;
      t.nll_shape += nll.value;
      value += wt.alpha_phi * l.value + beta * wt.beta_phi * nll.value;
      g.segment<kShapeDim>(head::kShape) +=
          wt.alpha_phi * l.grad + beta * wt.beta_phi * nll.grad.head<kShapeDim>();
      out.grad_aux.shape_sigma_raw += beta * wt.beta_phi * nll.grad.tail<kShapeDim>();
    }
    if (lab.landmarks) {
      if (options.model == nullptr)
        throw ValidationError("total_loss: landmark labels need a deformable model");
      const ShapeCoeffs phi_pred = o.segment<kShapeDim>(head::kShape);
      const Pose pose = pose_from_head(o);
      const Landmarks xihat = landmarks68(*options.model, phi_pred, pose);
      const LossGrad l =
          landmark_loss_grad(xihat, *lab.landmarks, options.landmark_weights, lab.landmarks_2d);
      const LossGrad nll = landmark_nll_grad(xihat, aux.landmark_scale_raw, *lab.landmarks,
                                             options.landmark_weights, lab.landmarks_2d);
      t.landmarks += l.value;
      t.nll_landmarks += nll.value;
      value += wt.alpha_xi * l.value + beta * wt.beta_xi * nll.value;

      constexpr int kL = 3 * kLandmarkCount;
      const Eigen::Matrix<double, kL, 1> gxi =
          wt.alpha_xi * l.grad + beta * wt.beta_xi * nll.grad.head<kL>();
      Landmarks gxi_mat;
      Eigen::Map<Eigen::Matrix<double, kL, 1>>(gxi_mat.data()) = gxi;
      Eigen::Map<Eigen::Matrix<double, kL, 1>>(out.grad_aux.landmark_scale_raw.data()) +=
          beta * wt.beta_xi * nll.grad.tail<kL>();

      const LandmarkBackward back = landmarks68_backward(*options.model, phi_pred, pose, gxi_mat);
      g.segment<4>(head::kQuat) += quat_from_features_jacobian(z).transpose() * back.dq;
      g[head::kPosSize] += back.dtx;
      g[head::kPosSize + 1] += back.dty;
      g[head::kPosSize + 2] += back.ds * smoothclip_derivative(f[2]);
      g.segment<kShapeDim>(head::kShape) += back.dphi;
    }
    if (lab.bbox) {
      const std::span<const double, 4> sraw(aux.bbox_sigma_raw.data(), 4);
      const LossGrad l = bbox_loss_grad(zb, *lab.bbox);
      const LossGrad nll = bbox_nll_grad(zb, sraw, *lab.bbox);
      t.bbox += l.value;
      t.nll_bbox += nll.value;
      value += wt.alpha_bb * l.value + beta * wt.beta_bb * nll.value;
      g.segment<4>(head::kBox) += wt.alpha_bb * l.grad + beta * wt.beta_bb * nll.grad.head<4>();
      out.grad_aux.bbox_sigma_raw += beta * wt.beta_bb * nll.grad.tail<4>();
    }
  }

  out.value = value / bsize;
  for (HeadOutput& g : out.grad_outputs) g /= bsize;
  out.grad_aux.shape_sigma_raw /= bsize;
  out.grad_aux.landmark_scale_raw /= bsize;
  out.grad_aux.bbox_sigma_raw /= bsize;
  return out;
}

}  // namespace headpose
