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

#include <Eigen/Core>

#include "headpose/image.hpp"
#include "headpose/rng.hpp"
#include "headpose/sample.hpp"

namespace headpose {

struct AugmentConfig {
  double scale_mean = 1.1;
  double scale_sd = 0.1;
  double scale_min = 0.6;
  double scale_max = 1.6;
  double rotation_limit_deg = 30.0;
  /// Per-axis offset sd as a fraction of the ROI side.
  double offset_sd_fraction = 0.1;
  /// Offsets are clipped at this many standard deviations before the
  /// visibility projection.
  double offset_clip_sd = 3.0;
  double min_visible_fraction = 0.7;
  double mirror_prob = 0.5;
  double quarter_turn_prob = 0.01;

  int intensity_ops_picked = 4;
  double intensity_op_prob = 0.1;
  double gamma_min = 0.5, gamma_max = 2.0;
  double contrast_min = 0.7, contrast_max = 1.3;
  double brightness_min = -30.0, brightness_max = 30.0;
  double blur_sigma_min = 0.5, blur_sigma_max = 1.5;
  int posterize_bits_min = 4, posterize_bits_max = 6;

  double noise1_prob = 0.5, noise1_sigma = 4.0;
  double noise2_prob = 0.1, noise2_sigma = 16.0;

  int output_size = 129;

  void validate() const;
};

/// Square region of interest in source pixels plus the discrete flags.
struct GeometricDraw {
  Eigen::Vector2d roi_center = Eigen::Vector2d::Zero();
  double roi_side = 0.0;
  /// Rotation of the ROI in the source image, degrees.
  double roi_angle_deg = 0.0;
  double scale = 1.0;
  bool mirror = false;
  bool quarter_turn = false;
  /// Source pixels -> crop pixels, without the quarter turn or mirror.
  Affine2D transform;
};

GeometricDraw sample_geometric(RandomSource& rng, const Box& bb, const AugmentConfig& cfg);

std::array<Eigen::Vector2d, 4> roi_corners(const GeometricDraw& draw);

/// Area of bb inside the (convex) polygon divided by the area of bb.
double visible_fraction(const Box& bb, std::span<const Eigen::Vector2d> polygon);

/// Isotropic normalized coordinates of an image: the image center maps to 0
/// and the longer side spans [-1, 1].
struct ImageFrame {
  int width = 0;
  int height = 0;

  /// normalized -> pixels
  Affine2D to_pixel() const;
  Affine2D to_normalized() const { return to_pixel().inverse(); }
};

/// Full crop-pixel map of a draw: quarter turn and mirror about the crop
/// center applied after the ROI transform.
Affine2D crop_transform(const GeometricDraw& draw, int out_size);

/// The ROI transform expressed in normalized coordinates of the source image
/// and of the crop.
Affine2D normalized_transform(const GeometricDraw& draw, const ImageFrame& source, int out_size);

/// Transforms normalized labels through the similarity `t`, then a +90 degree
/// turn about the origin, then a reflection x -> -x. Covariance features are
/// dropped. Throws ValidationError if `t` is not an orientation-preserving
/// similarity.
SampleRecord transform_labels(const SampleRecord& labels, const Affine2D& t, bool mirror,
                              bool quarter_turn);

GrayImage equalize(const GrayImage& img);
GrayImage posterize(const GrayImage& img, int bits);
GrayImage adjust_gamma(const GrayImage& img, double gamma);
GrayImage adjust_contrast(const GrayImage& img, double factor);
GrayImage adjust_brightness(const GrayImage& img, double offset);
GrayImage gaussian_blur(const GrayImage& img, double sigma);

/// Picks `intensity_ops_picked` of the six intensity operations without
/// replacement; each picked operation fires independently.
GrayImage intensity_ops(const GrayImage& img, RandomSource& rng, const AugmentConfig& cfg);

/// Two independent Gaussian pixel-noise stages.
GrayImage add_noise(const GrayImage& img, RandomSource& rng, const AugmentConfig& cfg);

/// Per-pixel Gaussian noise of the given sd, rounded and clamped.
GrayImage gaussian_noise(const GrayImage& img, RandomSource& rng, double sigma);

struct AugmentedSample {
  GrayImage crop;
  SampleRecord labels;
  GeometricDraw draw;
};

/// Geometry, intensity and noise stages on one sample. `labels` are in
/// normalized coordinates of `image` and must carry a bbox.
AugmentedSample augment_sample(const GrayImage& image, const SampleRecord& labels, RandomSource& rng,
                               const AugmentConfig& cfg = {});

}  // namespace headpose
