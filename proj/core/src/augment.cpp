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
#include "headpose/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "headpose/error.hpp"
#include "headpose/facemodel.hpp"

namespace headpose {
namespace {

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

template <typename F>
GrayImage map_pixels(const GrayImage& img, F&& f) {
  GrayImage out = img;
  for (auto& p : out.pixels) p = to_u8(f(static_cast<double>(p)));
  return out;
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a[0] * b[1] - a[1] * b[0]; }

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i)
    acc += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * acc;
}

GeometricDraw make_draw(const Box& bb, double scale, double angle_deg, const Eigen::Vector2d& offset,
                        int out_size) {
  GeometricDraw d;
  d.scale = scale;
  d.roi_angle_deg = angle_deg;
  d.roi_side = scale * std::max(bb.w, bb.h);
  d.roi_center = Eigen::Vector2d(bb.cx, bb.cy) + offset;
  const double k = out_size / d.roi_side;
  const Affine2D to_roi = Affine2D::translation(-d.roi_center[0], -d.roi_center[1]);
  const Affine2D rot = Affine2D::similarity(k, -deg2rad(angle_deg), 0.5 * out_size, 0.5 * out_size);
  d.transform = rot.after(to_roi);
  return d;
}

}  // namespace

void AugmentConfig::validate() const {
  for (double p : {mirror_prob, quarter_turn_prob, intensity_op_prob, noise1_prob, noise2_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("augment: probabilities must lie in [0,1]");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_sd >= 0.0))
    throw ValidationError("augment: invalid scale distribution");
  if (!(rotation_limit_deg >= 0.0) || !(offset_sd_fraction >= 0.0))
    throw ValidationError("augment: limits must be non-negative");
  if (!(min_visible_fraction > 0.0 && min_visible_fraction <= 1.0))
    throw ValidationError("augment: visible fraction must lie in (0,1]");
  if (intensity_ops_picked < 0 || intensity_ops_picked > 6)
    throw ValidationError("augment: between 0 and 6 intensity ops can be picked");
  if (posterize_bits_min < 1 || posterize_bits_max > 8 || posterize_bits_min > posterize_bits_max)
    throw ValidationError("augment: invalid posterize range");
  if (output_size < 1) throw ValidationError("augment: output size must be positive");
}

std::array<Eigen::Vector2d, 4> roi_corners(const GeometricDraw& d) {
  const double a = deg2rad(d.roi_angle_deg);
  Eigen::Matrix2d r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  const double h = 0.5 * d.roi_side;
  return {d.roi_center + r * Eigen::Vector2d(-h, -h), d.roi_center + r * Eigen::Vector2d(h, -h),
          d.roi_center + r * Eigen::Vector2d(h, h), d.roi_center + r * Eigen::Vector2d(-h, h)};
}

double visible_fraction(const Box& bb, std::span<const Eigen::Vector2d> polygon) {
  const auto c = bb.corners();
  const double area = bb.w * bb.h;
  if (!(area > 0.0)) throw ValidationError("visible_fraction: box has no area");
  std::vector<Eigen::Vector2d> clip(polygon.begin(), polygon.end());
  if (polygon_area(clip) < 0.0) std::reverse(clip.begin(), clip.end());

  std::vector<Eigen::Vector2d> poly = {{c[0], c[1]}, {c[2], c[1]}, {c[2], c[3]}, {c[0], c[3]}};
  for (std::size_t e = 0; e < clip.size() && !poly.empty(); ++e) {
    const Eigen::Vector2d a = clip[e];
    const Eigen::Vector2d b = clip[(e + 1) % clip.size()];
    const Eigen::Vector2d edge = b - a;
    std::vector<Eigen::Vector2d> next;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Eigen::Vector2d p = poly[i];
      const Eigen::Vector2d q = poly[(i + 1) % poly.size()];
      const double sp = cross(edge, p - a);
      const double sq = cross(edge, q - a);
      if (sp >= 0.0) next.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) next.push_back(p + (sp / (sp - sq)) * (q - p));
    }
    poly = std::move(next);
  }
  if (poly.size() < 3) return 0.0;
  return std::abs(polygon_area(poly)) / area;
}

GeometricDraw sample_geometric(RandomSource& rng, const Box& bb, const AugmentConfig& cfg) {
  cfg.validate();
  if (!(bb.w > 0.0 && bb.h > 0.0)) throw ValidationError("sample_geometric: box has no area");
  const double base_side = std::max(bb.w, bb.h);

  double scale = std::clamp(rng.normal(cfg.scale_mean, cfg.scale_sd), cfg.scale_min, cfg.scale_max);
  const double angle = rng.uniform(-cfg.rotation_limit_deg, cfg.rotation_limit_deg);
  const double sd = cfg.offset_sd_fraction * scale * base_side;
  const double lim = cfg.offset_clip_sd * sd;
  Eigen::Vector2d offset(std::clamp(rng.normal(0.0, sd), -lim, lim),
                         std::clamp(rng.normal(0.0, sd), -lim, lim));
  const bool mirror = rng.bernoulli(cfg.mirror_prob);
  const bool quarter = rng.bernoulli(cfg.quarter_turn_prob);

  auto visibility = [&](double s, const Eigen::Vector2d& off) {
    const auto corners = roi_corners(make_draw(bb, s, angle, off, cfg.output_size));
    return visible_fraction(bb, corners);
  };
  const double need = cfg.min_visible_fraction;

  // A very small ROI cannot show enough of the box even when centered;
  // grow it to the smallest feasible scale.
  if (visibility(scale, Eigen::Vector2d::Zero()) < need) {
    double lo = scale;
    double hi = scale;
    while (visibility(hi, Eigen::Vector2d::Zero()) < need) hi *= 1.5;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      (visibility(mid, Eigen::Vector2d::Zero()) >= need ? hi : lo) = mid;
    }
    scale = hi;
  }
  // Pull the offset back towards the box center until enough is visible.
  if (visibility(scale, offset) < need) {
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      (visibility(scale, mid * offset) >= need ? lo : hi) = mid;
    }
    offset *= lo;
  }

  GeometricDraw d = make_draw(bb, scale, angle, offset, cfg.output_size);
  d.mirror = mirror;
  d.quarter_turn = quarter;
  return d;
}

Affine2D ImageFrame::to_pixel() const {
  if (width <= 0 || height <= 0) throw ValidationError("image frame has no area");
  const double half = 0.5 * std::max(width, height);
  return Affine2D::similarity(half, 0.0, 0.5 * width, 0.5 * height);
}

Affine2D crop_transform(const GeometricDraw& draw, int out_size) {
  const double c = 0.5 * out_size;
  Affine2D t = draw.transform;
  if (draw.quarter_turn) {
    const Affine2D turn = Affine2D::similarity(1.0, 0.5 * kPi, 0.0, 0.0);
    t = Affine2D::translation(c, c).after(turn.after(Affine2D::translation(-c, -c))).after(t);
  }
  if (draw.mirror) {
    Affine2D flip;
    flip.m << -1, 0, out_size, 0, 1, 0;
    t = flip.after(t);
  }
  return t;
}

Affine2D normalized_transform(const GeometricDraw& draw, const ImageFrame& source, int out_size) {
  const ImageFrame crop{out_size, out_size};
  return crop.to_normalized().after(draw.transform).after(source.to_pixel());
}

SampleRecord transform_labels(const SampleRecord& labels, const Affine2D& t, bool mirror,
                              bool quarter_turn) {
  const Eigen::Matrix2d a = t.linear();
  const double det = a.determinant();
  const double tol = 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff());
  if (!(det > 0.0) || std::abs(a(0, 0) - a(1, 1)) > tol || std::abs(a(0, 1) + a(1, 0)) > tol)
    throw ValidationError("transform_labels: expected an orientation-preserving similarity");
  const double k = std::sqrt(det);

  Affine2D g = t;
  double angle = std::atan2(a(1, 0), a(0, 0));
  if (quarter_turn) {
    g = Affine2D::similarity(1.0, 0.5 * kPi).after(g);
    angle += 0.5 * kPi;
  }
  if (mirror) {
    Affine2D flip;
    flip.m << -1, 0, 0, 0, 1, 0;
    g = flip.after(g);
  }

  SampleRecord out = labels;
  out.rot_cov_features.reset();
  out.pos_cov_features.reset();
  if (labels.rotation) {
    const Quaternion view{0.0, 0.0, std::sin(0.5 * angle), std::cos(0.5 * angle)};
    Quaternion q = quat_mul(view, *labels.rotation);
    if (mirror) q = {q.x, -q.y, -q.z, q.w};
    out.rotation = q;
  }
  if (labels.pos_size) {
    const Eigen::Vector2d p = g.apply({labels.pos_size->x, labels.pos_size->y});
    out.pos_size = PosSize{p[0], p[1], k * labels.pos_size->s};
  }
  if (labels.landmarks) {
    const auto& perm = landmark_mirror_permutation();
    Landmarks lm;
    for (int i = 0; i < kLandmarkCount; ++i) {
      const int src = mirror ? perm[i] : i;
      const Eigen::Vector2d p = g.apply(labels.landmarks->row(src).head<2>().transpose());
      lm.row(i) << p[0], p[1], k * (*labels.landmarks)(src, 2);
    }
    out.landmarks = lm;
  }
  if (labels.bbox) {
    const auto c = labels.bbox->corners();
    double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
    for (const auto& [cx, cy] : {std::pair{c[0], c[1]}, std::pair{c[2], c[1]}, std::pair{c[2], c[3]},
                                 std::pair{c[0], c[3]}}) {
      const Eigen::Vector2d p = g.apply({cx, cy});
      x0 = std::min(x0, p[0]);
      x1 = std::max(x1, p[0]);
      y0 = std::min(y0, p[1]);
      y1 = std::max(y1, p[1]);
    }
    out.bbox = Box::from_corners(x0, y0, x1, y1);
  }
  return out;
}

GrayImage equalize(const GrayImage& img) {
  std::array<long, 256> hist{};
  for (auto p : img.pixels) ++hist[p];
  long last = 0;
  for (int i = 255; i >= 0; --i)
    if (hist[i] != 0) {
      last = hist[i];
      break;
    }
  const long total = static_cast<long>(img.pixels.size());
  const long step = (total - last) / 255;
  if (step == 0) return img;
  std::array<std::uint8_t, 256> lut{};
  long n = step / 2;
  for (int i = 0; i < 256; ++i) {
    lut[i] = static_cast<std::uint8_t>(std::min(255L, n / step));
    n += hist[i];
  }
  GrayImage out = img;
  for (auto& p : out.pixels) p = lut[p];
  return out;
}

GrayImage posterize(const GrayImage& img, int bits) {
  if (bits < 1 || bits > 8) throw ValidationError("posterize: bits must be in [1,8]");
  const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
  GrayImage out = img;
  for (auto& p : out.pixels) p &= mask;
  return out;
}

GrayImage adjust_gamma(const GrayImage& img, double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("adjust_gamma: gamma must be positive");
  return map_pixels(img, [gamma](double v) { return 255.0 * std::pow(v / 255.0, gamma); });
}

GrayImage adjust_contrast(const GrayImage& img, double factor) {
  if (img.pixels.empty()) return img;
  const double mean =
      std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / static_cast<double>(img.pixels.size());
  return map_pixels(img, [mean, factor](double v) { return mean + factor * (v - mean); });
}

GrayImage adjust_brightness(const GrayImage& img, double offset) {
  return map_pixels(img, [offset](double v) { return v + offset; });
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= norm;

  const int w = img.width, h = img.height;
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * img.at(std::clamp(x + i, 0, w - 1), y);
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out.at(x, y) = to_u8(acc);
    }
  return out;
}

GrayImage intensity_ops(const GrayImage& img, RandomSource& rng, const AugmentConfig& cfg) {
  constexpr int kOps = 6;  // equalize, posterize, gamma, contrast, brightness, blur
  std::array<int, kOps> order;
  std::iota(order.begin(), order.end(), 0);
  const int picked = cfg.intensity_ops_picked;
  for (int i = 0; i < picked; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(kOps - i)));
    std::swap(order[i], order[j]);
  }
  std::sort(order.begin(), order.begin() + picked);

  GrayImage out = img;
  for (int i = 0; i < picked; ++i) {
    if (!rng.bernoulli(cfg.intensity_op_prob)) continue;
    switch (order[i]) {
      case 0:
        out = equalize(out);
        break;
      case 1: {
        const auto span = static_cast<std::uint64_t>(cfg.posterize_bits_max - cfg.posterize_bits_min + 1);
        out = posterize(out, cfg.posterize_bits_min + static_cast<int>(rng.uniform_index(span)));
        break;
      }
      case 2:
        out = adjust_gamma(out, rng.uniform(cfg.gamma_min, cfg.gamma_max));
        break;
      case 3:
        out = adjust_contrast(out, rng.uniform(cfg.contrast_min, cfg.contrast_max));
        break;
      case 4:
        out = adjust_brightness(out, rng.uniform(cfg.brightness_min, cfg.brightness_max));
        break;
      case 5:
        out = gaussian_blur(out, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
        break;
    }
  }
  return out;
}

GrayImage gaussian_noise(const GrayImage& img, RandomSource& rng, double sigma) {
  if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  if (sigma == 0.0) return img;
  GrayImage out = img;
  for (auto& p : out.pixels) p = to_u8(p + sigma * rng.normal());
  return out;
}

GrayImage add_noise(const GrayImage& img, RandomSource& rng, const AugmentConfig& cfg) {
  GrayImage out = img;
  if (rng.bernoulli(cfg.noise1_prob)) out = gaussian_noise(out, rng, cfg.noise1_sigma);
  if (rng.bernoulli(cfg.noise2_prob)) out = gaussian_noise(out, rng, cfg.noise2_sigma);
  return out;
}

AugmentedSample augment_sample(const GrayImage& image, const SampleRecord& labels, RandomSource& rng,
                               const AugmentConfig& cfg) {
  if (!labels.bbox) throw ValidationError("augment: sample " + labels.id + " has no bbox");
  const ImageFrame frame{image.width, image.height};
  const Affine2D to_px = frame.to_pixel();
  const double half = to_px.m(0, 0);
  const Eigen::Vector2d c = to_px.apply({labels.bbox->cx, labels.bbox->cy});
  const Box bb_px{c[0], c[1], half * labels.bbox->w, half * labels.bbox->h};

  AugmentedSample out;
  out.draw = sample_geometric(rng, bb_px, cfg);
  out.crop = warp_image(image, crop_transform(out.draw, cfg.output_size), cfg.output_size);
  out.crop = intensity_ops(out.crop, rng, cfg);
  out.crop = add_noise(out.crop, rng, cfg);
  out.labels = transform_labels(labels, normalized_transform(out.draw, frame, cfg.output_size),
                                out.draw.mirror, out.draw.quarter_turn);
  return out;
}

}  // namespace headpose
