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
#include <cmath>
#include <random>

#include <doctest.h>

#include "headpose/error.hpp"
#include "headpose/fitting.hpp"
#include "headpose/rng.hpp"
#include "support.hpp"

using namespace headpose;

namespace {

GaussianMixture shape_prior() {
  return GaussianMixture::single(Eigen::VectorXd::Zero(kShapeDim), Eigen::VectorXd::Constant(kShapeDim, 0.25));
}

FitProblem exact_problem(const DeformableModel& model, const Pose& pose, const ShapeCoeffs& coeffs) {
  FitProblem p;
  p.landmarks2d = landmarks68(model, coeffs, pose).leftCols<2>();
  p.confidence.fill(1.0);
  p.prior_pose = pose;
  p.shape_prior = shape_prior();
  p.model = &model;
  return p;
}

}  // namespace

TEST_SUITE("fitting") {

TEST_CASE("visibility weights") {
  const DeformableModel m = synthetic_model(0);
  const auto frontal = visibility_weights(Quaternion::identity(), m);
  double mean = 0.0;
  for (double w : frontal) {
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
    CHECK(w > 0.2);
    mean += w / kLandmarkCount;
  }
  CHECK(mean > 0.7);

  // Turned 90 degrees about the vertical axis: the side moving away from the
  // camera has normals pointing away, matching the rotated-normal oracle.
  const Quaternion yaw90 = testing::axis_angle({0, 1, 0}, M_PI / 2);
  const auto turned = visibility_weights(yaw90, m);
  const auto normals = landmark_normals(m);
  const Eigen::Matrix3d r = testing::matrix_oracle(yaw90);
  int hidden = 0;
  for (int i = 0; i < kLandmarkCount; ++i) {
    const double cosine = -(r * normals.row(i).transpose())[2];
    CHECK(std::abs(turned[i] - std::clamp(cosine, 0.0, 1.0)) < 1e-12);
    hidden += turned[i] < 0.05;
  }
  CHECK(hidden >= 20);

  std::mt19937_64 gen(1);
  for (int t = 0; t < 20; ++t) {
    const Quaternion q = testing::random_rotation(gen);
    CHECK(visibility_weights(q, m) == visibility_weights(-q, m));
  }
}

TEST_CASE("objective terms") {
  const DeformableModel m = synthetic_model(1);
  const Pose pose{from_euler({10, -5, 3}), 0.05, -0.02, 0.6};
  FitProblem p = exact_problem(m, pose, ShapeCoeffs::Zero());
  p.prior_pose_weight = 0.0;
  FitConfig cfg;
  const FitObjective o = fit_objective(pose, ShapeCoeffs::Zero(), p, cfg);
  CHECK(std::abs(o.landmarks) < 1e-24);
  CHECK(std::abs(o.rotation_prior) < 1e-15);
  // At the mean of a single diagonal component only the normalizer remains.
  const double constant = 0.5 * kShapeDim * std::log(2 * M_PI * 0.25);
  CHECK(std::abs(o.mixture - constant) < 1e-10);
  CHECK(o.norm < 1e-24);
  CHECK(o.barrier < 1e-20);

  p.prior_pose_weight = 2.0;
  p.prior_pose.q = testing::axis_angle({1, 0, 0}, 0.4);
  const FitObjective withprior = fit_objective(Pose{Quaternion::identity(), 0.05, -0.02, 0.6}, ShapeCoeffs::Zero(), p, cfg);
  CHECK(std::abs(withprior.rotation_prior - std::pow(std::sin(0.2), 2)) < 1e-12);
}

TEST_CASE("objective gradient matches finite differences") {
  const DeformableModel m = synthetic_model(2);
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n(0.0, 0.3);
  const Pose truth{from_euler({15, 5, -8}), 0.1, 0.0, 0.55};
  FitProblem p = exact_problem(m, truth, ShapeCoeffs::Zero());
  p.prior_pose.q = from_euler({20, 0, 0});
  FitConfig cfg;
  const auto w = effective_landmark_weights(p, cfg);
  for (int trial = 0; trial < 5; ++trial) {
    FitParams x;
    x.qraw = Eigen::Vector4d(n(gen), n(gen), n(gen), 1 + n(gen));
    x.tx = n(gen);
    x.ty = n(gen);
    x.size_raw = n(gen);
    for (int k = 0; k < kShapeDim; ++k) x.phi[k] = n(gen);
    const FitObjective o = evaluate_fit_objective(x, p, cfg, w);
    const Eigen::VectorXd v = x.flatten();
    for (int i = 0; i < FitParams::kSize; ++i) {
      Eigen::VectorXd vp = v, vm = v;
      vp[i] += 1e-5;
      vm[i] -= 1e-5;
      const double num = (evaluate_fit_objective(FitParams::unflatten(vp), p, cfg, w).value -
                          evaluate_fit_objective(FitParams::unflatten(vm), p, cfg, w).value) /
                         2e-5;
      const double a = o.grad[i];
      CHECK((std::abs(a - num) <= 1e-7 || std::abs(a - num) / std::max(std::abs(a), std::abs(num)) < 1e-4));
    }
  }
}

TEST_CASE("fit from the solution stays put") {
  const DeformableModel m = synthetic_model(3);
  const Pose truth{from_euler({-12, 6, 4}), -0.05, 0.08, 0.7};
  const FitProblem p = exact_problem(m, truth, ShapeCoeffs::Zero());
  const FitResult r = fit(p, truth, ShapeCoeffs::Zero());
  CHECK(r.converged);
  CHECK_FALSE(r.failed);
  CHECK(r.iterations <= 2);
  CHECK((r.pose.q.vec() - truth.q.canonical().vec()).norm() < 1e-8);
  CHECK(std::abs(r.pose.tx - truth.tx) < 1e-8);
  CHECK(std::abs(r.pose.s - truth.s) < 1e-8);
  CHECK(r.coeffs.norm() < 1e-8);
}

TEST_CASE("fit recovers a perturbed pose and never increases the objective") {
  const DeformableModel m = synthetic_model(4);
  const GaussianMixture prior = shape_prior();
  SeededRng rng(9);
  double total = 0.0;
  for (int i = 0; i < 10; ++i) {
    SyntheticFitCase c = make_synthetic_fit_case(m, prior, rng, 10.0, 20.0);
    c.problem.prior_pose_weight = 0.0;
    ShapeCoeffs init = c.truth_coeffs;
    for (int k = 0; k < kShapeDim; ++k) init[k] += rng.normal(0.0, 0.1);
    CHECK(geodesic_error(c.problem.prior_pose.q, c.truth.q) == doctest::Approx(deg2rad(10.0)).epsilon(1e-9));
    const FitResult r = fit(c.problem, c.problem.prior_pose, init);
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
      CHECK(r.objective_trace[k] <= r.objective_trace[k - 1]);
    CHECK(r.objective_trace.back() == r.final_objective);
    total += rad2deg(geodesic_error(r.pose.q, c.truth.q));

    const FitResult again = fit(c.problem, c.problem.prior_pose, init);
    CHECK(again.pose.q == r.pose.q);
    CHECK(again.coeffs == r.coeffs);
  }
  CHECK(total / 10 < 2.0);
}

TEST_CASE("problem validation") {
  const DeformableModel m = synthetic_model(5);
  FitProblem p = exact_problem(m, Pose{}, ShapeCoeffs::Zero());
  p.confidence.fill(0.0);
  for (int i = 0; i < 5; ++i) p.confidence[i] = 1.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.confidence[5] = 1.0;
  CHECK_NOTHROW(p.validate());
  p.prior_pose_weight = -1.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p.prior_pose_weight = 1.0;
  p.model = nullptr;
  CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("single-component mixture is the sample mean and variance") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(200, 5);
  for (int i = 0; i < x.rows(); ++i)
    for (int d = 0; d < 5; ++d) x(i, d) = 2.0 * n(gen) + d;
  const GmmFitResult r = gmm_fit(x, 1, 0);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  CHECK((r.mixture.means.row(0) - mean).norm() < 1e-10);
  CHECK((r.mixture.variances.row(0) - var).norm() < 1e-10);
  CHECK(r.mixture.weights[0] == doctest::Approx(1.0));
}

TEST_CASE("two separated clusters") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 0.5);
  const int d = 4;
  Eigen::RowVectorXd c0 = Eigen::RowVectorXd::Constant(d, -5.0), c1 = Eigen::RowVectorXd::Constant(d, 5.0);
  c1[0] = 8.0;
  Eigen::MatrixXd x(400, d);
  for (int i = 0; i < 400; ++i)
    for (int k = 0; k < d; ++k) x(i, k) = (i % 2 ? c1[k] : c0[k]) + n(gen);
  const GmmFitResult r = gmm_fit(x, 2, 7);
  for (std::size_t k = 1; k < r.log_likelihood.size(); ++k)
    CHECK(r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-9 * std::abs(r.log_likelihood[k - 1]));
  const int first = r.mixture.means(0, 0) < 0 ? 0 : 1;
  CHECK((r.mixture.means.row(first) - c0).norm() < 0.05 * c0.norm());
  CHECK((r.mixture.means.row(1 - first) - c1).norm() < 0.05 * c1.norm());
  CHECK(std::abs(r.mixture.weights.sum() - 1.0) < 1e-12);
  CHECK((r.mixture.variances.array() >= 1e-6).all());
  CHECK(std::abs(r.mixture.log_likelihood(x) - r.log_likelihood.back()) < 1e-8 * std::abs(r.log_likelihood.back()));

  CHECK_THROWS_AS(gmm_fit(x.topRows(1), 2, 0), ValidationError);
}

TEST_CASE("mixture density and serialization") {
  GaussianMixture g;
  g.weights = Eigen::Vector2d(0.3, 0.7);
  g.means = Eigen::MatrixXd(2, 2);
  g.means << 0, 0, 1, 2;
  g.variances = Eigen::MatrixXd(2, 2);
  g.variances << 1, 2, 0.5, 0.25;
  const Eigen::VectorXd x = Eigen::Vector2d(0.4, 1.1);
  double density = 0.0;
  for (int k = 0; k < 2; ++k) {
    double comp = g.weights[k];
    for (int d = 0; d < 2; ++d)
      comp *= std::exp(-0.5 * std::pow(x[d] - g.means(k, d), 2) / g.variances(k, d)) /
              std::sqrt(2 * M_PI * g.variances(k, d));
    density += comp;
  }
  Eigen::VectorXd grad;
  CHECK(std::abs(g.nll(x, &grad) + std::log(density)) < 1e-12);
  for (int d = 0; d < 2; ++d) {
    Eigen::VectorXd xp = x, xm = x;
    xp[d] += 1e-6;
    xm[d] -= 1e-6;
    CHECK(std::abs(grad[d] - (g.nll(xp) - g.nll(xm)) / 2e-6) < 1e-6);
  }

  const GaussianMixture back = gmm_from_json(gmm_to_json(g));
  CHECK(back.weights == g.weights);
  CHECK(back.means == g.means);
  CHECK(back.variances == g.variances);
  CHECK_THROWS_AS(gmm_from_json("{\"weights\": [0.5, 0.6], \"means\": [[0],[1]], \"variances\": [[1],[1]]}"),
                  ValidationError);
  CHECK_THROWS_AS(gmm_from_json("{\"weights\": [1], \"means\": [[0]], \"variances\": [[0]]}"), ValidationError);
  CHECK_THROWS_AS(gmm_from_json("not json"), ValidationError);
}

}  // TEST_SUITE
