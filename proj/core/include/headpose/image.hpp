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

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

namespace headpose {

/// 8-bit monochrome image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

/// 2x3 matrix mapping source coordinates to destination coordinates.
/// Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
struct Affine2D {
  Eigen::Matrix<double, 2, 3> m = Eigen::Matrix<double, 2, 3>::Identity();

  static Affine2D identity() { return {}; }
  static Affine2D translation(double dx, double dy);
  /// Rotation by `angle` radians (x towards y) and isotropic scale about the origin.
  static Affine2D similarity(double scale, double angle, double dx = 0.0, double dy = 0.0);

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return m.leftCols<2>() * p + m.col(2); }
  Eigen::Matrix2d linear() const { return m.leftCols<2>(); }
  double det() const { return linear().determinant(); }
  bool invertible() const;
  Affine2D inverse() const;
  /// (*this) after `first`: p -> this(first(p)).
  Affine2D after(const Affine2D& first) const;
};

/// Bilinear resampling through the inverse map with edge clamping.
GrayImage warp_image(const GrayImage& img, const Affine2D& t, int out_width, int out_height);
inline GrayImage warp_image(const GrayImage& img, const Affine2D& t, int out_size = 129) {
  return warp_image(img, t, out_size, out_size);
}

/// Binary PGM (P5), maxval 255.
GrayImage decode_pgm(std::string_view bytes);
std::string encode_pgm(const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

}  // namespace headpose
