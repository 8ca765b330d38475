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

#include "headpose/augment.hpp"
#include "headpose/error.hpp"
#include "headpose/facemodel.hpp"
#include "headpose/rng.hpp"
#include "support.hpp"

using namespace headpose;

namespace {

/// Normal draws return zero and uniform draws a fixed value.
class FixedSource final : public RandomSource {
 public:
  explicit FixedSource(double u) : u_(u) {}
  double uniform() override { return u_; }
  double normal() override { return 0.0; }

 private:
  double u_;
};

/// Fraction of `bb` inside a convex polygon by dense point sampling.
double sampled_visibility(const Box& bb, const std::array<Eigen::Vector2d, 4>& poly) {
  const int n = 300;
  int inside = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Eigen::Vector2d p(bb.cx - 0.5 * bb.w + (i + 0.5) * bb.w / n, bb.cy - 0.5 * bb.h + (j + 0.5) * bb.h / n);
      int sign = 0;
      bool in = true;
      for (int k = 0; k < 4; ++k) {
        const Eigen::Vector2d a = poly[k], b = poly[(k + 1) % 4];
        const double cr = (b - a).x() * (p - a).y() - (b - a).y() * (p - a).x();
        const int s = cr > 0 ? 1 : -1;
        if (sign == 0) sign = s;
        if (s != sign) in = false;
      }
      inside += in;
    }
  return inside / double(n * n);
}

SampleRecord face_labels(const DeformableModel& m, const Pose& pose, const ShapeCoeffs& phi) {
  SampleRecord r;
  r.id = "face";
  r.rotation = pose.q;
  r.pos_size = PosSize{pose.tx, pose.ty, pose.s};
  r.shape = phi;
  r.landmarks = landmarks68(m, phi, pose);
  r.bbox = bbox_from_mesh(m, phi, pose);
  r.rot_cov_features = std::array<double, 6>{1, 0, 1, 0, 0, 1};
  return r;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("neutral draws give the centered axis-aligned crop") {
  FixedSource rng(0.5);
  const Box bb{200, 150, 80, 120};
  const GeometricDraw d = sample_geometric(rng, bb, {});
  CHECK(d.scale == doctest::Approx(1.1));
  CHECK(d.roi_angle_deg == doctest::Approx(0.0).scale(1e-12));
  CHECK(d.roi_side == doctest::Approx(1.1 * 120));
  CHECK((d.roi_center - Eigen::Vector2d(200, 150)).norm() < 1e-12);
  CHECK_FALSE(d.mirror);
  CHECK_FALSE(d.quarter_turn);
  // The box center lands on the crop center and the ROI spans the crop.
  CHECK((d.transform.apply({200, 150}) - Eigen::Vector2d(64.5, 64.5)).norm() < 1e-12);
  CHECK(std::abs(d.transform.det() - std::pow(129 / 132.0, 2)) < 1e-12);
}

TEST_CASE("visible fraction against point sampling") {
  std::mt19937_64 gen(1);
  SeededRng rng(2);
  const Box bb{0, 0, 50, 70};
  for (int i = 0; i < 30; ++i) {
    const GeometricDraw d = sample_geometric(rng, bb, {});
    const auto corners = roi_corners(d);
    CHECK(std::abs(visible_fraction(bb, corners) - sampled_visibility(bb, corners)) < 0.01);
  }
  const std::array<Eigen::Vector2d, 4> half{Eigen::Vector2d(0, -100), Eigen::Vector2d(100, -100),
                                            Eigen::Vector2d(100, 100), Eigen::Vector2d(0, 100)};
  CHECK(std::abs(visible_fraction(bb, half) - 0.5) < 1e-12);
}

TEST_CASE("every draw keeps enough of the box visible") {
  SeededRng rng(3);
  AugmentConfig cfg;
  cfg.scale_mean = 0.7;  // small ROIs exercise the scale correction
  cfg.scale_sd = 0.3;
  for (const Box& bb : {Box{0, 0, 60, 60}, Box{10, 20, 30, 90}, Box{0, 0, 100, 20}}) {
    for (int i = 0; i < 500; ++i) {
      const GeometricDraw d = sample_geometric(rng, bb, cfg);
      CHECK(visible_fraction(bb, roi_corners(d)) >= 0.7 - 1e-9);
      CHECK(std::abs(d.roi_angle_deg) <= 30.0);
    }
  }
}

TEST_CASE("draw statistics") {
  SeededRng rng(4);
  const Box bb{0, 0, 60, 80};
  const int n = 100000;
  double scale_sum = 0.0;
  int mirrors = 0, quarters = 0;
  for (int i = 0; i < n; ++i) {
    const GeometricDraw d = sample_geometric(rng, bb, {});
    scale_sum += d.scale;
    mirrors += d.mirror;
    quarters += d.quarter_turn;
    CHECK(d.scale >= 0.6);
    CHECK(d.scale <= 1.6);
  }
  CHECK(std::abs(scale_sum / n - 1.1) < 3 * 0.1 / std::sqrt(double(n)));
  CHECK(std::abs(mirrors / double(n) - 0.5) < 3.3 * std::sqrt(0.25 / n));
  CHECK(std::abs(quarters / double(n) - 0.01) < 3.3 * std::sqrt(0.0099 / n));
}

TEST_CASE("label transform basics") {
  const DeformableModel m = synthetic_model(0);
  const SampleRecord lab = face_labels(m, Pose{from_euler({20, -10, 5}), 0.1, -0.05, 0.5}, ShapeCoeffs::Zero());
  SampleRecord same = transform_labels(lab, Affine2D::identity(), false, false);
  CHECK_FALSE(same.rot_cov_features.has_value());
  CHECK(*same.rotation == *lab.rotation);
  CHECK(*same.landmarks == *lab.landmarks);
  CHECK(same.bbox->cx == lab.bbox->cx);

  const SampleRecord twice =
      transform_labels(transform_labels(lab, Affine2D::identity(), true, false), Affine2D::identity(), true, false);
  CHECK(*twice.rotation == *lab.rotation);
  CHECK(*twice.landmarks == *lab.landmarks);
  CHECK(twice.pos_size->x == lab.pos_size->x);
  CHECK(twice.bbox->cx == lab.bbox->cx);
  CHECK(twice.bbox->w == lab.bbox->w);

  Affine2D shear;
  shear.m << 1, 0.3, 0, 0, 1, 0;
  CHECK_THROWS_AS(transform_labels(lab, shear, false, false), ValidationError);
  Affine2D flip;
  flip.m << -1, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(transform_labels(lab, flip, false, false), ValidationError);
}

TEST_CASE("transformed labels reproject onto the transformed landmarks") {
  const DeformableModel m = synthetic_model(1);
  const auto& perm = landmark_mirror_permutation();
  SeededRng rng(5);
  std::mt19937_64 gen(6);
  std::normal_distribution<double> n(0.0, 0.5);
  AugmentConfig cfg;
  cfg.quarter_turn_prob = 0.3;
  const ImageFrame frame{320, 240};
  for (int i = 0; i < 100; ++i) {
    const Pose pose{from_euler({n(gen) * 60, n(gen) * 40, n(gen) * 40}), 0.2 * n(gen), 0.2 * n(gen),
                    0.3 + 0.1 * std::abs(n(gen))};
    ShapeCoeffs phi;
    for (int k = 0; k < kShapeDim; ++k) phi[k] = n(gen);
    const SampleRecord lab = face_labels(m, pose, phi);
    const SampleRecord sym = face_labels(m, pose, ShapeCoeffs::Zero());
    const Affine2D px = frame.to_pixel();
    const Eigen::Vector2d c = px.apply({lab.bbox->cx, lab.bbox->cy});
    const GeometricDraw d =
        sample_geometric(rng, Box{c[0], c[1], px.m(0, 0) * lab.bbox->w, px.m(0, 0) * lab.bbox->h}, cfg);
    const Affine2D t = normalized_transform(d, frame, cfg.output_size);
    // Mirrored faces are only representable with a symmetric shape.
    const SampleRecord& src = d.mirror ? sym : lab;
    const SampleRecord out = transform_labels(src, t, d.mirror, d.quarter_turn);
    const Landmarks expect = testing::map_landmarks(*src.landmarks, t, d.mirror, d.quarter_turn, perm);
    const Landmarks reproj = landmarks68(m, *out.shape, testing::pose_of(out));
    CHECK((reproj - expect).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((*out.landmarks - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("crop pixels and normalized labels use the same map") {
  SeededRng rng(7);
  AugmentConfig cfg;
  cfg.quarter_turn_prob = 0.5;
  const ImageFrame src{200, 300};
  const ImageFrame crop{cfg.output_size, cfg.output_size};
  for (int i = 0; i < 50; ++i) {
    const GeometricDraw d = sample_geometric(rng, Box{90, 160, 60, 70}, cfg);
    const Affine2D t = normalized_transform(d, src, cfg.output_size);
    const Affine2D full = crop_transform(d, cfg.output_size);
    for (const Eigen::Vector2d p : {Eigen::Vector2d(90, 160), Eigen::Vector2d(10, 20), Eigen::Vector2d(150, 250)}) {
      Eigen::Vector2d q = t.apply(src.to_normalized().apply(p));
      if (d.quarter_turn) q = Eigen::Vector2d(-q[1], q[0]);
      if (d.mirror) q[0] = -q[0];
      CHECK((crop.to_normalized().apply(full.apply(p)) - q).norm() < 1e-12);
    }
  }
}

TEST_CASE("intensity operations") {
  std::mt19937 gen(1);
  GrayImage img(40, 30);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(gen() % 256);

  FixedSource never(0.99);
  CHECK(intensity_ops(img, never, {}) == img);
  CHECK(add_noise(img, never, {}) == img);
  CHECK(adjust_gamma(img, 1.0) == img);
  CHECK(adjust_contrast(img, 1.0) == img);
  CHECK(adjust_brightness(img, 0.0) == img);

  const GrayImage post = posterize(img, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    CHECK(post.pixels[i] % 16 == 0);
    CHECK(post.pixels[i] == (img.pixels[i] & 0xF0));
  }

  const GrayImage bright = adjust_brightness(img, 300.0);
  for (auto p : bright.pixels) CHECK(p == 255);

  const GrayImage flat(20, 20, 77);
  CHECK(gaussian_blur(flat, 1.2) == flat);
  CHECK(equalize(flat) == flat);

  // Equalization is monotone and spreads a narrow histogram.
  GrayImage narrow(64, 64);
  for (auto& p : narrow.pixels) p = static_cast<std::uint8_t>(100 + gen() % 20);
  const GrayImage eq = equalize(narrow);
  for (std::size_t i = 0; i < narrow.pixels.size(); ++i)
    for (std::size_t j = i + 1; j < std::min(narrow.pixels.size(), i + 50); ++j)
      if (narrow.pixels[i] < narrow.pixels[j]) CHECK(eq.pixels[i] <= eq.pixels[j]);
  const auto [lo, hi] = std::minmax_element(eq.pixels.begin(), eq.pixels.end());
  CHECK(*lo < 20);
  CHECK(*hi > 230);

  // Contrast scales deviations from the mean.
  const GrayImage two(2, 1);
  GrayImage pair = two;
  pair.pixels = {100, 140};
  const GrayImage c = adjust_contrast(pair, 0.5);
  CHECK(c.pixels[0] == 110);
  CHECK(c.pixels[1] == 130);
}

TEST_CASE("noise moments and clamping") {
  const GrayImage gray(400, 250, 128);
  SeededRng rng(8);
  const GrayImage noisy = gaussian_noise(gray, rng, 4.0);
  double s = 0.0, s2 = 0.0;
  for (auto p : noisy.pixels) {
    s += p;
    s2 += double(p) * p;
  }
  const double nn = noisy.pixels.size();
  const double sd = std::sqrt(s2 / nn - (s / nn) * (s / nn));
  CHECK(std::abs(sd - 4.0) < 0.4);

  const GrayImage white(100, 100, 255);
  SeededRng rng2(9);
  AugmentConfig always;
  always.noise1_prob = 1.0;
  always.noise2_prob = 1.0;
  const GrayImage w = add_noise(white, rng2, always);
  int below = 0;
  for (auto p : w.pixels) below += p < 255;
  CHECK(below > 4000);
}

TEST_CASE("augmented samples are deterministic and sized") {
  const DeformableModel m = synthetic_model(2);
  const SampleRecord lab = face_labels(m, Pose{from_euler({10, 5, 0}), 0.0, 0.0, 0.4}, ShapeCoeffs::Zero());
  GrayImage img(160, 120);
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 160; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * 3 + y * 5) % 256);
  for (int k = 0; k < 20; ++k) {
    SeededRng a = SeededRng(11).split(k), b = SeededRng(11).split(k);
    const AugmentedSample x = augment_sample(img, lab, a);
    const AugmentedSample y = augment_sample(img, lab, b);
    CHECK(x.crop.width == 129);
    CHECK(x.crop.height == 129);
    CHECK(x.crop == y.crop);
    CHECK(x.labels.rotation == y.labels.rotation);
  }
  SampleRecord nobox = lab;
  nobox.bbox.reset();
  SeededRng r(1);
  CHECK_THROWS_AS(augment_sample(img, nobox, r), ValidationError);
  AugmentConfig bad;
  bad.mirror_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

}  // TEST_SUITE
