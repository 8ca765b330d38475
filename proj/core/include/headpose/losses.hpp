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
#include <vector>

#include <Eigen/Core>

#include "headpose/facemodel.hpp"
#include "headpose/geometry.hpp"
#include "headpose/sample.hpp"

namespace headpose {

/// Loss weights of the combined objective. Defaults are the training values.
struct LossWeights {
  double alpha_rot = 1.0;
  double alpha_p = 1.0;
  double alpha_phi = 0.01;
  double alpha_xi = 1.0;
  double alpha_bb = 0.01;
  double alpha_norm = 1e-6;
  double beta_total = 0.01;
  double beta_rot = 1.0;
  double beta_p = 1.0;
  double beta_phi = 0.01;
  double beta_xi = 1.0;
  double beta_bb = 0.01;

  void validate() const;
};

/// Per-landmark weights, applied to each coordinate of the landmark.
using LandmarkWeights = std::array<double, kLandmarkCount>;

/// All ones except the eight upper/lower eyelid points, which are zero.
LandmarkWeights default_landmark_weights();

/// Lower bound added to every learned standard deviation / Laplace scale.
inline constexpr double kScaleFloor = 1e-6;
/// smoothclip(u) + kScaleFloor.
double positive_scale(double raw);

// ---------------------------------------------------------------------------
// Losses on decoded quantities.

double rot_loss(const Quaternion& qhat, const Quaternion& q);
/// Gaussian NLL of the tangent residual log_map(qhat^-1 q). Throws
/// ValidationError if `cov` is not positive-definite.
double rot_nll(const Quaternion& qhat, const Quaternion& q, const Covariance3& cov);
double pos_size_loss(const PosSize& phat, const PosSize& p);
double pos_size_nll(const PosSize& phat, const PosSize& p, const Covariance3& cov);
double shape_loss(std::span<const double> phihat, std::span<const double> phi);
/// `sigma` holds standard deviations; non-positive entries are rejected.
double shape_nll(std::span<const double> phihat, std::span<const double> phi,
                 std::span<const double> sigma);
double landmark_loss(const Landmarks& xihat, const Landmarks& xi, const LandmarkWeights& w,
                     bool two_d);
/// Laplace NLL; `scale` holds one positive scale per coordinate.
double landmark_nll(const Landmarks& xihat, const Landmarks& xi, const Landmarks& scale,
                    const LandmarkWeights& w, bool two_d);
double bbox_loss(const Box& bhat, const Box& b);
double bbox_nll(const Box& bhat, const Box& b, std::span<const double, 4> sigma);
/// (1 - |q'|)^2 on the unnormalized quaternion.
double quat_norm_penalty(const Eigen::Vector4d& qprime);

// ---------------------------------------------------------------------------
// The same losses as functions of unconstrained raw features, returning the
// value and its gradient. Ground-truth arguments are constants.

struct LossGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// grad: z[4]
LossGrad rot_loss_grad(std::span<const double, 4> z, const Quaternion& q);
/// grad: z[4], m[6]
LossGrad rot_nll_grad(std::span<const double, 4> z, std::span<const double, 6> m,
                      const Quaternion& q, double eps = kDefaultCovarianceEps);
/// Raw position/size features f = (x, y, size feature); s = smoothclip(f[2]).
PosSize pos_size_from_features(std::span<const double, 3> f);
/// grad: f[3]
LossGrad pos_size_loss_grad(std::span<const double, 3> f, const PosSize& p);
/// grad: f[3], m[6]
LossGrad pos_size_nll_grad(std::span<const double, 3> f, std::span<const double, 6> m,
                           const PosSize& p, double eps = kDefaultCovarianceEps);
/// grad: phihat[50]
LossGrad shape_loss_grad(std::span<const double> phihat, std::span<const double> phi);
/// grad: phihat[50], sigma_raw[50]
LossGrad shape_nll_grad(std::span<const double> phihat, std::span<const double> sigma_raw,
                        std::span<const double> phi);
/// grad: xihat[68*3] row-major
LossGrad landmark_loss_grad(const Landmarks& xihat, const Landmarks& xi, const LandmarkWeights& w,
                            bool two_d);
/// grad: xihat[68*3], scale_raw[68*3]
LossGrad landmark_nll_grad(const Landmarks& xihat, const Landmarks& scale_raw, const Landmarks& xi,
                           const LandmarkWeights& w, bool two_d);
/// Box from features: (z0, z1, smoothclip(z2), smoothclip(z3)).
Box box_from_features(std::span<const double, 4> z);
/// grad: z[4]
LossGrad bbox_loss_grad(std::span<const double, 4> z, const Box& b);
/// grad: z[4], sigma_raw[4]
LossGrad bbox_nll_grad(std::span<const double, 4> z, std::span<const double, 4> sigma_raw,
                       const Box& b);
/// grad: z[4], penalty on q' = (z0, z1, z2, smoothclip(z3))
LossGrad quat_norm_penalty_grad(std::span<const double, 4> z);

// ---------------------------------------------------------------------------
// Combined objective over a batch.

/// Layout of the per-sample raw head output.
namespace head {
inline constexpr int kQuat = 0;
inline constexpr int kPosSize = 4;
inline constexpr int kShape = 7;
inline constexpr int kBox = kShape + kShapeDim;
inline constexpr int kRotCov = kBox + 4;
inline constexpr int kPosCov = kRotCov + 6;
inline constexpr int kSize = kPosCov + 6;
}  // namespace head

using HeadOutput = Eigen::Matrix<double, head::kSize, 1>;

/// Input-independent learned scales of the shape, landmark and box NLLs.
struct AuxParams {
  ShapeCoeffs shape_sigma_raw = ShapeCoeffs::Zero();
  Landmarks landmark_scale_raw = Landmarks::Zero();
  Eigen::Vector4d bbox_sigma_raw = Eigen::Vector4d::Zero();

  static constexpr int kSize = kShapeDim + 3 * kLandmarkCount + 4;
  Eigen::VectorXd flatten() const;
  static AuxParams unflatten(const Eigen::VectorXd& v);
};

/// Decoded prediction of one head output.
SampleRecord decode_head(const HeadOutput& raw, const DeformableModel* model,
                         const std::string& id = {});
Pose pose_from_head(const HeadOutput& raw);

struct LossTerms {
  double rot = 0.0, pos = 0.0, shape = 0.0, landmarks = 0.0, bbox = 0.0, norm = 0.0;
  double nll_rot = 0.0, nll_pos = 0.0, nll_shape = 0.0, nll_landmarks = 0.0, nll_bbox = 0.0;
};

struct TotalLoss {
  double value = 0.0;
  /// Unweighted per-term batch sums.
  LossTerms terms;
  /// d value / d raw output, one entry per sample.
  std::vector<HeadOutput> grad_outputs;
  AuxParams grad_aux;
};

struct LossSample {
  HeadOutput output;
  const SampleRecord* labels = nullptr;
};

struct TotalLossOptions {
  LossWeights weights;
  LandmarkWeights landmark_weights = default_landmark_weights();
  double eps = kDefaultCovarianceEps;
  /// Required when any sample carries landmark labels.
  const DeformableModel* model = nullptr;
};

/// (1/B) sum over samples of the alpha-weighted regression terms plus
/// beta_total times the beta-weighted NLL terms. Terms whose labels are
/// absent are dropped; the norm penalty is tied to the rotation group.
TotalLoss total_loss(std::span<const LossSample> batch, const AuxParams& aux,
                     const TotalLossOptions& options);

}  // namespace headpose
