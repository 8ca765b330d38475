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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "headpose/facemodel.hpp"
#include "headpose/rng.hpp"
#include "headpose/sample.hpp"

namespace headpose {

/// Diagonal-covariance Gaussian mixture over shape coefficients.
struct GaussianMixture {
  Eigen::VectorXd weights;    // K
  Eigen::MatrixXd means;      // K x D
  Eigen::MatrixXd variances;  // K x D

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
  void validate() const;

  /// -log p(x); optionally the gradient with respect to x.
  double nll(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const;
  /// Sum of log p over the rows of `samples`.
  double log_likelihood(const Eigen::MatrixXd& samples) const;

  Eigen::VectorXd sample(RandomSource& rng) const;

  /// Single component with the given mean and variances.
  static GaussianMixture single(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance);
};

std::string gmm_to_json(const GaussianMixture& gmm);
GaussianMixture gmm_from_json(std::string_view text);

struct GmmFitOptions {
  int max_iterations = 500;
  double tolerance = 1e-10;  // relative log-likelihood improvement
  double variance_floor = 1e-6;
  int kmeans_iterations = 10;
};

struct GmmFitResult {
  GaussianMixture mixture;
  /// Log-likelihood of the parameters entering each EM iteration, plus the final one.
  std::vector<double> log_likelihood;
};

/// EM on the rows of `samples`, seeded by k-means++ followed by Lloyd steps.
GmmFitResult gmm_fit(const Eigen::MatrixXd& samples, int components, std::uint64_t seed,
                     const GmmFitOptions& options = {});

using Landmarks2d = Eigen::Matrix<double, kLandmarkCount, 2, Eigen::RowMajor>;

struct FitProblem {
  Landmarks2d landmarks2d = Landmarks2d::Zero();
  std::array<double, kLandmarkCount> confidence{};
  Pose prior_pose;
  double prior_pose_weight = 1.0;
  GaussianMixture shape_prior;
  const DeformableModel* model = nullptr;

  void validate() const;
};

struct FitConfig {
  double landmark_weight = 1.0;
  double mixture_weight = 0.01;
  double norm_weight = 1.0;
  double barrier_weight = 1.0;
  /// Softness of the size barrier tau * softplus(-s / tau).
  double barrier_temperature = 1e-2;
  bool use_visibility = true;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-6;
  double step_tolerance = 1e-10;
  double armijo = 1e-4;
  double shrink = 0.5;
  /// Failed-fit threshold on landmark RMSE relative to the annotation box diagonal.
  double max_rmse_fraction = 0.05;
};

/// Unconstrained optimization variables: raw quaternion (normalized for use),
/// translation, size feature (s = smoothclip), shape coefficients.
struct FitParams {
  Eigen::Vector4d qraw = Eigen::Vector4d(0, 0, 0, 1);
  double tx = 0.0;
  double ty = 0.0;
  double size_raw = 0.0;
  ShapeCoeffs phi = ShapeCoeffs::Zero();

  static constexpr int kSize = 7 + kShapeDim;
  static FitParams from_pose(const Pose& pose, const ShapeCoeffs& coeffs);
  Pose pose() const;
  Eigen::VectorXd flatten() const;
  static FitParams unflatten(const Eigen::VectorXd& v);
};

struct FitObjective {
  double value = 0.0;
  double landmarks = 0.0;
  double rotation_prior = 0.0;
  double mixture = 0.0;
  double norm = 0.0;
  double barrier = 0.0;
  Eigen::VectorXd grad;  // FitParams::kSize
};

/// Per-landmark weights in [0, 1]: cosine between the rotated outward normal
/// and the direction towards the camera, clamped at zero.
std::array<double, kLandmarkCount> visibility_weights(const Quaternion& prior_q,
                                                      const DeformableModel& model);

/// Confidence times (optionally) visibility under the prior rotation.
std::array<double, kLandmarkCount> effective_landmark_weights(const FitProblem& problem,
                                                              const FitConfig& config);

FitObjective evaluate_fit_objective(const FitParams& params, const FitProblem& problem,
                                    const FitConfig& config,
                                    std::span<const double, kLandmarkCount> landmark_weights);

/// Objective at a pose/shape (convenience over evaluate_fit_objective).
FitObjective fit_objective(const Pose& pose, const ShapeCoeffs& coeffs, const FitProblem& problem,
                           const FitConfig& config = {});

struct FitResult {
  Pose pose;
  ShapeCoeffs coeffs = ShapeCoeffs::Zero();
  double final_objective = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double landmark_rmse = 0.0;
  /// Non-converged, or landmark RMSE above the configured fraction of the box diagonal.
  bool failed = false;
  std::vector<double> objective_trace;
};

/// Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.
FitResult fit(const FitProblem& problem, const Pose& init_pose, const ShapeCoeffs& init_coeffs,
              const FitConfig& config = {});

/// Generate-project-refit fixture.
struct SyntheticFitCase {
  FitProblem problem;
  Pose truth;
  ShapeCoeffs truth_coeffs = ShapeCoeffs::Zero();
};

/// Head with |yaw|, |pitch|, |roll| up to `max_angle_deg` and shape drawn
/// from `prior`; the landmarks are its exact 2D projections plus optional
/// noise. The prior pose is the truth rotated by `perturb_deg` about a random
/// axis, with translation and size jittered by 0.02 and 5%.
SyntheticFitCase make_synthetic_fit_case(const DeformableModel& model, const GaussianMixture& prior,
                                         RandomSource& rng, double perturb_deg,
                                         double max_angle_deg = 20.0, double landmark_noise_sd = 0.0);

}  // namespace headpose
