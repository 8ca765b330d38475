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
#include "headpose/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "headpose/data.hpp"
#include "headpose/error.hpp"

namespace headpose {

Affine2D Affine2D::translation(double dx, double dy) {
  Affine2D t;
  t.m(0, 2) = dx;
  t.m(1, 2) = dy;
  return t;
}

Affine2D Affine2D::similarity(double scale, double angle, double dx, double dy) {
  const double c = scale * std::cos(angle);
  const double s = scale * std::sin(angle);
  Affine2D t;
  t.m << c, -s, dx, s, c, dy;
  return t;
}

bool Affine2D::invertible() const { return std::abs(det()) > 1e-9; }

Affine2D Affine2D::inverse() const {
  if (!invertible()) throw ValidationError("affine transform is not invertible");
  const Eigen::Matrix2d inv = linear().inverse();
  Affine2D out;
  out.m.leftCols<2>() = inv;
  out.m.col(2) = -inv * m.col(2);
  return out;
}

Affine2D Affine2D::after(const Affine2D& first) const {
  Affine2D out;
  out.m.leftCols<2>() = linear() * first.linear();
  out.m.col(2) = linear() * first.m.col(2) + m.col(2);
  return out;
}

GrayImage warp_image(const GrayImage& img, const Affine2D& t, int out_width, int out_height) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("warp_image: empty source image");
  const Affine2D inv = t.inverse();
  GrayImage out(out_width, out_height);
  const int w = img.width;
  const int h = img.height;
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Eigen::Vector2d src = inv.apply({x + 0.5, y + 0.5});
      const double fx = std::clamp(src[0] - 0.5, 0.0, static_cast<double>(w - 1));
      const double fy = std::clamp(src[1] - 0.5, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int y0 = static_cast<int>(std::floor(fy));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double ax = fx - x0;
      const double ay = fy - y0;
      const double top = (1.0 - ax) * img.at(x0, y0) + ax * img.at(x1, y0);
      const double bottom = (1.0 - ax) * img.at(x0, y1) + ax * img.at(x1, y1);
      const double v = (1.0 - ay) * top + ay * bottom;
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return std::string(bytes.substr(start, pos - start));
}

int parse_header_int(const std::string& tok, const char* what) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw ValidationError(std::string("PGM: bad ") + what);
  return std::stoi(tok);
}

}  // namespace

GrayImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P5") throw ValidationError("PGM: expected binary P5 magic");
  const int w = parse_header_int(next_token(bytes, pos), "width");
  const int h = parse_header_int(next_token(bytes, pos), "height");
  const int maxval = parse_header_int(next_token(bytes, pos), "maxval");
  if (w <= 0 || h <= 0) throw ValidationError("PGM: non-positive size");
  if (maxval != 255) throw ValidationError("PGM: only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < pos + n) throw ValidationError("PGM: truncated raster");
  GrayImage img(w, h);
  std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), n, img.pixels.begin());
  return img;
}

std::string encode_pgm(const GrayImage& img) {
  std::ostringstream os;
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::string out = os.str();
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open image " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  write_file_atomic(path, encode_pgm(img));
}

}  // namespace headpose
