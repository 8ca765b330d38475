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
#include <vector>

#include <doctest.h>

#include "headpose/error.hpp"
#include "headpose/facemodel.hpp"
#include "headpose/gradcheck.hpp"
#include "headpose/losses.hpp"
#include "support.hpp"

using namespace headpose;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * M_PI);

Landmarks random_landmarks(std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  Landmarks l;
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c) l(i, c) = n(gen);
  return l;
}

LandmarkWeights ones() {
  LandmarkWeights w;
  w.fill(1.0);
  return w;
}

SampleRecord full_labels(const DeformableModel& model, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 0.3);
  SampleRecord r;
  r.id = "s";
  r.rotation = testing::random_rotation(gen);
  r.pos_size = PosSize{n(gen), n(gen), 0.5 + std::abs(n(gen))};
  ShapeCoeffs phi;
  for (int k = 0; k < kShapeDim; ++k) phi[k] = n(gen);
  r.shape = phi;
  r.landmarks = landmarks68(model, phi, Pose{*r.rotation, r.pos_size->x, r.pos_size->y, r.pos_size->s});
  r.bbox = Box{n(gen), n(gen), 0.5, 0.6};
  return r;
}

HeadOutput random_output(std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 0.5);
  HeadOutput o;
  for (int i = 0; i < head::kSize; ++i) o[i] = n(gen);
  return o;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("rotation loss") {
  std::mt19937_64 gen(1);
  const Quaternion q = testing::random_rotation(gen);
  CHECK(std::abs(rot_loss(q, q)) < 1e-15);
  CHECK(std::abs(rot_loss(q, -q)) < 1e-15);
  CHECK(std::abs(rot_loss(Quaternion::identity(), testing::axis_angle({0, 1, 0}, M_PI / 2)) - 0.5) < 1e-15);
  for (int i = 0; i < 100; ++i) {
    const Quaternion a = testing::random_rotation(gen);
    const Quaternion b = testing::random_rotation(gen);
    const double l = rot_loss(a, b);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
    CHECK(rot_loss(-a, b) == l);
    CHECK(rot_loss(a, -b) == l);
    // sin^2 of half the geodesic angle.
    CHECK(std::abs(l - std::pow(std::sin(0.5 * geodesic_error(a, b)), 2)) < 1e-12);
  }
}

TEST_CASE("rotation NLL closed forms and density oracle") {
  std::mt19937_64 gen(2);
  const Quaternion q = testing::random_rotation(gen);
  Covariance3 id;
  CHECK(std::abs(rot_nll(q, q, id) - 1.5 * std::log(2 * M_PI)) < 1e-12);
  Covariance3 e2;
  e2.matrix = std::exp(2.0) * Eigen::Matrix3d::Identity();
  CHECK(std::abs(rot_nll(q, q, e2) - (1.5 * std::log(2 * M_PI) + 3.0)) < 1e-12);

  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    std::array<double, 6> m;
    for (double& v : m) v = n(gen);
    m[0] += 2.0;
    m[2] += 2.0;
    m[5] += 2.0;
    const Covariance3 cov = covariance_from_features(m);
    const Quaternion qhat = testing::random_rotation(gen);
    const Eigen::Vector3d axis = testing::random_axis(gen);
    const double angle = std::uniform_real_distribution<double>(0.0, 2.5)(gen);
    const Quaternion target = testing::from_eigen(testing::to_eigen(qhat) * Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis)));
    CHECK(std::abs(rot_nll(qhat, target, cov) - testing::gaussian_nll_oracle(angle * axis, cov.matrix)) < 1e-9);

    // A global rotation g of both arguments leaves the residual unchanged.
    const Quaternion g = testing::random_rotation(gen);
    const double moved = rot_nll(quat_mul(g, qhat), quat_mul(g, target), cov);
    CHECK(std::abs(moved - rot_nll(qhat, target, cov)) < 1e-9);
  }
  Covariance3 bad;
  bad.matrix = -Eigen::Matrix3d::Identity();
  CHECK_THROWS_AS(rot_nll(q, q, bad), ValidationError);
}

TEST_CASE("position and size losses") {
  const PosSize p{0.1, -0.2, 0.7};
  CHECK(pos_size_loss(p, p) == 0.0);
  CHECK(pos_size_loss({1.1, 1.8, 2.7}, p) == doctest::Approx(9.0).epsilon(1e-14));
  Covariance3 id;
  CHECK(std::abs(pos_size_nll(p, p, id) - 2.75682) < 1e-5);
  CHECK(std::abs(pos_size_nll(p, p, id) - 1.5 * std::log(2 * M_PI)) < 1e-12);
  Covariance3 four;
  four.matrix = 4.0 * Eigen::Matrix3d::Identity();
  CHECK(std::abs(pos_size_nll(p, p, four) - 4.83626) < 1e-5);

  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    const PosSize a{n(gen), n(gen), 1 + std::abs(n(gen))};
    const PosSize b{n(gen), n(gen), 1 + std::abs(n(gen))};
    const double sq = (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.s - b.s) * (a.s - b.s);
    CHECK(std::abs(pos_size_loss(a, b) - sq) < 1e-13);
    std::array<double, 6> m;
    for (double& v : m) v = n(gen);
    const Covariance3 cov = covariance_from_features(m);
    CHECK(std::abs(pos_size_nll(a, b, cov) - testing::gaussian_nll_oracle(b.vec() - a.vec(), cov.matrix)) <
          1e-8 * std::max(1.0, std::abs(pos_size_nll(a, b, cov))));
  }
}

TEST_CASE("NLL shrinks with the residual") {
  Covariance3 cov;
  cov.matrix << 2, 0.3, 0.1, 0.3, 1, 0.2, 0.1, 0.2, 0.5;
  const PosSize p{0, 0, 1};
  double prev = 1e300;
  for (double t = 2.0; t >= 0.0; t -= 0.1) {
    const double v = pos_size_nll({0.3 * t, -0.2 * t, 1 + 0.1 * t}, p, cov);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("shape losses") {
  std::vector<double> phi(kShapeDim, 0.3), sigma(kShapeDim, 1.0);
  CHECK(shape_loss(phi, phi) == 0.0);
  CHECK(std::abs(shape_nll(phi, phi, sigma) - 45.947) < 1e-3);
  CHECK(std::abs(shape_nll(phi, phi, sigma) - kShapeDim * kHalfLog2Pi) < 1e-12);

  std::mt19937_64 gen(4);
  std::normal_distribution<double> n;
  std::vector<double> a(kShapeDim), b(kShapeDim), s(kShapeDim);
  for (int k = 0; k < kShapeDim; ++k) {
    a[k] = n(gen);
    b[k] = n(gen);
    s[k] = 0.2 + std::abs(n(gen));
  }
  double l2 = 0, nll = 0;
  for (int k = 0; k < kShapeDim; ++k) {
    l2 += (a[k] - b[k]) * (a[k] - b[k]);
    nll -= std::log(std::exp(-0.5 * std::pow((b[k] - a[k]) / s[k], 2)) / (s[k] * std::sqrt(2 * M_PI)));
  }
  CHECK(std::abs(shape_loss(a, b) - l2) < 1e-12);
  CHECK(std::abs(shape_nll(a, b, s) - nll) < 1e-10);
  s[7] = 0.0;
  CHECK_THROWS_AS(shape_nll(a, b, s), ValidationError);
}

TEST_CASE("landmark losses") {
  std::mt19937_64 gen(5);
  const Landmarks xi = random_landmarks(gen);
  const LandmarkWeights w = default_landmark_weights();
  CHECK(landmark_loss(xi, xi, w, false) == 0.0);

  int zeros = 0;
  for (double v : w) zeros += v == 0.0;
  CHECK(zeros == 8);

  Landmarks off = xi;
  off(0, 1) += 2.0;
  CHECK(std::abs(landmark_loss(off, xi, w, false) - 2.0) < 1e-14);

  Landmarks eyes = xi;
  for (int i : {37, 38, 40, 41, 43, 44, 46, 47}) eyes.row(i) += Eigen::RowVector3d(5, -7, 3);
  CHECK(landmark_loss(eyes, xi, w, false) == 0.0);

  LandmarkWeights single{};
  single[3] = 1.0;
  Landmarks unit = Landmarks::Ones();
  // One active landmark in 2D has two coordinates.
  CHECK(std::abs(landmark_nll(xi, xi, unit, single, true) - 2 * std::log(2.0)) < 1e-12);
  Landmarks three = xi;
  three(3, 0) += 3.0;
  CHECK(std::abs(landmark_nll(three, xi, unit, single, true) - (2 * std::log(2.0) + 3.0)) < 1e-12);

  const Landmarks other = random_landmarks(gen);
  double z_part = 0.0;
  for (int i = 0; i < kLandmarkCount; ++i) z_part += std::abs(other(i, 2) - xi(i, 2));
  CHECK(std::abs(landmark_loss(other, xi, ones(), true) - (landmark_loss(other, xi, ones(), false) - z_part)) <
        1e-12);

  Landmarks scale;
  std::uniform_real_distribution<double> u(0.2, 2.0);
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c) scale(i, c) = u(gen);
  double oracle = 0.0;
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c) {
      const double b = scale(i, c);
      oracle -= w[i] * std::log(std::exp(-std::abs(other(i, c) - xi(i, c)) / b) / (2 * b));
    }
  CHECK(std::abs(landmark_nll(other, xi, scale, w, false) - oracle) < 1e-9);
  scale(5, 1) = -1.0;
  CHECK_THROWS_AS(landmark_nll(other, xi, scale, w, false), ValidationError);
}

TEST_CASE("box losses use corner coordinates") {
  const Box b{0.1, 0.2, 0.5, 0.4};
  CHECK(bbox_loss(b, b) == 0.0);
  const Box shifted = Box::from_corners(-0.15 + 1, 0.0 + 1, 0.35 + 1, 0.4 + 1);
  CHECK(std::abs(bbox_loss(shifted, b) - 4.0) < 1e-13);
  const std::array<double, 4> one{1, 1, 1, 1};
  CHECK(std::abs(bbox_nll(b, b, one) - 3.67576) < 1e-5);
  CHECK(std::abs(bbox_nll(b, b, one) - 4 * kHalfLog2Pi) < 1e-12);
}

TEST_CASE("quaternion norm penalty") {
  CHECK(quat_norm_penalty(Eigen::Vector4d(0.5, 0.5, 0.5, 0.5)) == doctest::Approx(0.0).scale(1e-15));
  CHECK(quat_norm_penalty(Eigen::Vector4d(0, 2, 0, 0)) == 1.0);
  CHECK(quat_norm_penalty(Eigen::Vector4d::Zero()) == 1.0);
  const std::array<double, 4> unit{0, 0, 0, 0};
  const LossGrad g = quat_norm_penalty_grad(unit);
  CHECK(g.value == 0.0);
  CHECK(g.grad.norm() == 0.0);
}

TEST_CASE("rotation loss has no tangent gradient at its minimum") {
  const std::array<double, 4> z{0.3, -0.2, 0.1, 0.4};
  const Quaternion q = quat_from_features(z);
  const LossGrad g = rot_loss_grad(z, q);
  CHECK(std::abs(g.value) < 1e-15);
  CHECK(g.grad.norm() < 1e-14);
}

TEST_CASE("positive scale parameterization") {
  CHECK(positive_scale(0.0) == 1.0 + kScaleFloor);
  CHECK(positive_scale(-800.0) == kScaleFloor);
}

TEST_CASE("total loss assembles the weighted terms") {
  const DeformableModel model = synthetic_model(1);
  std::mt19937_64 gen(6);
  TotalLossOptions opt;
  opt.model = &model;
  opt.weights.beta_total = 0.5;

  const SampleRecord lab = full_labels(model, gen);
  const HeadOutput out = random_output(gen);
  AuxParams aux;
  std::normal_distribution<double> n(0.0, 0.3);
  for (int k = 0; k < kShapeDim; ++k) aux.shape_sigma_raw[k] = n(gen);
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c) aux.landmark_scale_raw(i, c) = n(gen);
  for (int k = 0; k < 4; ++k) aux.bbox_sigma_raw[k] = n(gen);

  // Oracle from the decoded-value losses.
  const SampleRecord pred = decode_head(out, &model);
  const auto rot_m = *pred.rot_cov_features;
  const auto pos_m = *pred.pos_cov_features;
  std::vector<double> sig(kShapeDim);
  for (int k = 0; k < kShapeDim; ++k) sig[k] = positive_scale(aux.shape_sigma_raw[k]);
  Landmarks lscale;
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c) lscale(i, c) = positive_scale(aux.landmark_scale_raw(i, c));
  std::array<double, 4> bsig;
  for (int k = 0; k < 4; ++k) bsig[k] = positive_scale(aux.bbox_sigma_raw[k]);
  const Eigen::Vector4d qprime(out[0], out[1], out[2], smoothclip(out[3]));
  const std::span<const double> phihat(pred.shape->data(), kShapeDim);
  const std::span<const double> phi(lab.shape->data(), kShapeDim);
  const LossWeights& w = opt.weights;
  const double alpha_part = w.alpha_rot * rot_loss(*pred.rotation, *lab.rotation) +
                            w.alpha_p * pos_size_loss(*pred.pos_size, *lab.pos_size) +
                            w.alpha_phi * shape_loss(phihat, phi) +
                            w.alpha_xi * landmark_loss(*pred.landmarks, *lab.landmarks, opt.landmark_weights, false) +
                            w.alpha_bb * bbox_loss(*pred.bbox, *lab.bbox) + w.alpha_norm * quat_norm_penalty(qprime);
  const double beta_part =
      w.beta_rot * rot_nll(*pred.rotation, *lab.rotation, covariance_from_features(rot_m)) +
      w.beta_p * pos_size_nll(*pred.pos_size, *lab.pos_size, covariance_from_features(pos_m)) +
      w.beta_phi * shape_nll(phihat, phi, sig) +
      w.beta_xi * landmark_nll(*pred.landmarks, *lab.landmarks, lscale, opt.landmark_weights, false) +
      w.beta_bb * bbox_nll(*pred.bbox, *lab.bbox, bsig);
  const double expected = alpha_part + w.beta_total * beta_part;

  const std::vector<LossSample> single{{out, &lab}};
  const double v1 = total_loss(single, aux, opt).value;
  CHECK(std::abs(v1 - expected) < 1e-10 * std::abs(expected));

  const std::vector<LossSample> triple{{out, &lab}, {out, &lab}, {out, &lab}};
  CHECK(std::abs(total_loss(triple, aux, opt).value - v1) < 1e-12 * std::abs(v1));

  // Linear in beta_total and in each alpha.
  TotalLossOptions doubled = opt;
  doubled.weights.beta_total *= 2;
  CHECK(std::abs(total_loss(single, aux, doubled).value - v1 - w.beta_total * beta_part) < 1e-9 * std::abs(v1));
  doubled = opt;
  doubled.weights.alpha_rot *= 2;
  CHECK(std::abs(total_loss(single, aux, doubled).value - v1 -
                 w.alpha_rot * rot_loss(*pred.rotation, *lab.rotation)) < 1e-10 * std::abs(v1));
}

TEST_CASE("total loss drops absent label groups") {
  const DeformableModel model = synthetic_model(2);
  std::mt19937_64 gen(7);
  const SampleRecord full = full_labels(model, gen);
  SampleRecord lm_only;
  lm_only.id = "lm";
  lm_only.landmarks = full.landmarks;
  lm_only.landmarks_2d = true;
  const HeadOutput out = random_output(gen);
  TotalLossOptions opt;
  opt.model = &model;
  const AuxParams aux;
  const SampleRecord pred = decode_head(out, &model);
  Landmarks unit_scale = Landmarks::Constant(positive_scale(0.0));
  const double expected =
      (opt.weights.alpha_xi * landmark_loss(*pred.landmarks, *lm_only.landmarks, opt.landmark_weights, true) +
       opt.weights.beta_total * opt.weights.beta_xi *
           landmark_nll(*pred.landmarks, *lm_only.landmarks, unit_scale, opt.landmark_weights, true));
  const std::vector<LossSample> batch{{out, &lm_only}};
  const TotalLoss t = total_loss(batch, aux, opt);
  CHECK(std::abs(t.value - expected) < 1e-10 * expected);
  CHECK(t.terms.rot == 0.0);
  CHECK(t.terms.nll_bbox == 0.0);
  CHECK(t.grad_outputs[0].segment<6>(head::kRotCov).norm() == 0.0);

  // Perfect predictions with unit covariances leave only the NLL constants.
  HeadOutput exact = HeadOutput::Zero();
  exact[head::kRotCov] = exact[head::kRotCov + 2] = exact[head::kRotCov + 5] = 1.0;
  SampleRecord rot_only;
  rot_only.id = "r";
  rot_only.rotation = Quaternion::identity();
  TotalLossOptions plain;
  plain.weights.beta_total = 0.25;
  const double var = 1.0 + plain.eps;
  const std::vector<LossSample> b2{{exact, &rot_only}, {exact, &rot_only}};
  CHECK(std::abs(total_loss(b2, aux, plain).value - 0.25 * 1.5 * (std::log(2 * M_PI) + std::log(var))) < 1e-12);

  const std::vector<LossSample> empty;
  CHECK_THROWS_AS(total_loss(empty, aux, opt), ValidationError);
  SampleRecord nothing;
  const std::vector<LossSample> unlabeled{{out, &nothing}};
  CHECK_THROWS_AS(total_loss(unlabeled, aux, opt), ValidationError);
}

TEST_CASE("gradients agree with finite differences") {
  GradcheckOptions opt;
  opt.points = 10;
  opt.seed = 3;
  const auto results = run_gradcheck({}, opt);
  CHECK(results.size() == gradcheck_names().size());
  for (const auto& r : results) {
    INFO(r.name);
    CHECK(r.points == 10);
    CHECK(r.components > 0);
    CHECK(r.passed());
  }
  CHECK(gradient_component_ok(1.0, 1.0 + 5e-5, 1e-4, 1e-7));
  CHECK_FALSE(gradient_component_ok(1.0, 1.0 + 5e-4, 1e-4, 1e-7));
  CHECK(gradient_component_ok(1e-9, -5e-8, 1e-4, 1e-7));
}

}  // TEST_SUITE
