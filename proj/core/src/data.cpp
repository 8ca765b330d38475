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
#include "headpose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "headpose/error.hpp"
#include "json.hpp"

namespace headpose {
namespace {

using nlohmann::json;

class FieldReader {
 public:
  FieldReader(const json& obj, std::size_t line) : obj_(obj), line_(line) {}

  [[noreturn]] void fail(std::string_view field, std::string_view what) const {
    std::string msg;
    if (line_ > 0) msg += "line " + std::to_string(line_) + ": ";
    msg += "field '" + std::string(field) + "': " + std::string(what);
    throw ValidationError(msg);
  }

  bool has(const char* field) const { return obj_.contains(field) && !obj_.at(field).is_null(); }

  double number(const json& v, std::string_view field) const {
    if (!v.is_number()) fail(field, "expected a finite number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(field, "expected a finite number");
    return d;
  }

  double scalar(const char* field) const { return number(obj_.at(field), field); }

  std::vector<double> array(const char* field, std::size_t n) const {
    const json& v = obj_.at(field);
    if (!v.is_array() || v.size() != n) fail(field, "expected an array of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    out.reserve(n);
    for (const auto& e : v) out.push_back(number(e, field));
    return out;
  }

  const json& raw(const char* field) const { return obj_.at(field); }

 private:
  const json& obj_;
  std::size_t line_;
};

template <std::size_t N>
std::array<double, N> to_array(const std::vector<double>& v) {
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

constexpr const char* kGroupNames[] = {"rotation", "position_size", "shape", "landmarks3d", "landmarks2d", "bbox"};

std::vector<std::string> mask_names(const LabelMask& m) {
  const bool flags[] = {m.rotation, m.position_size, m.shape, m.landmarks3d, m.landmarks2d_only, m.bbox};
  std::vector<std::string> out;
  for (int i = 0; i < 6; ++i)
    if (flags[i]) out.emplace_back(kGroupNames[i]);
  return out;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw RuntimeFailure("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw RuntimeFailure("cannot move output into place at " + path.string());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string record_to_json(const SampleRecord& r) {
  json j = json::object();
  j["id"] = r.id;
  if (r.rotation) j["quat"] = {r.rotation->x, r.rotation->y, r.rotation->z, r.rotation->w};
  if (r.pos_size) {
    j["pos"] = {r.pos_size->x, r.pos_size->y};
    j["size"] = r.pos_size->s;
  }
  if (r.shape) j["shape"] = std::vector<double>(r.shape->data(), r.shape->data() + kShapeDim);
  if (r.landmarks) {
    json lm = json::array();
    for (int i = 0; i < kLandmarkCount; ++i) {
      const auto& row = r.landmarks->row(i);
      if (r.landmarks_2d)
        lm.push_back({row[0], row[1]});
      else
        lm.push_back({row[0], row[1], row[2]});
    }
    j["landmarks"] = std::move(lm);
  }
  if (r.bbox) j["bbox"] = {r.bbox->cx, r.bbox->cy, r.bbox->w, r.bbox->h};
  if (r.rot_cov_features) j["rot_cov"] = *r.rot_cov_features;
  if (r.pos_cov_features) j["pos_cov"] = *r.pos_cov_features;
  j["mask"] = mask_names(r.mask());
  return j.dump();
}

SampleRecord record_from_json(std::string_view text, std::size_t line_number) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError((line_number > 0 ? "line " + std::to_string(line_number) + ": " : std::string()) +
                          "malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("line " + std::to_string(line_number) + ": expected a JSON object");
  const FieldReader f(j, line_number);

  SampleRecord r;
  if (!f.has("id") || !j.at("id").is_string()) f.fail("id", "expected a string");
  r.id = j.at("id").get<std::string>();

  if (j.contains("quat")) {
    const auto q = f.array("quat", 4);
    const Quaternion quat{q[0], q[1], q[2], q[3]};
    if (std::abs(quat.norm() - 1.0) > 1e-6) f.fail("quat", "quaternion is not unit length");
    r.rotation = quat;
  }
  if (j.contains("pos") || j.contains("size")) {
    if (!j.contains("pos")) f.fail("pos", "required together with 'size'");
    if (!j.contains("size")) f.fail("size", "required together with 'pos'");
    const auto p = f.array("pos", 2);
    const double s = f.scalar("size");
    if (!(s > 0.0)) f.fail("size", "must be positive");
    r.pos_size = PosSize{p[0], p[1], s};
  }
  if (j.contains("shape")) {
    const auto s = f.array("shape", kShapeDim);
    r.shape = ShapeCoeffs(Eigen::Map<const ShapeCoeffs>(s.data()));
  }
  if (j.contains("landmarks")) {
    const json& lm = f.raw("landmarks");
    if (!lm.is_array() || lm.size() != kLandmarkCount) f.fail("landmarks", "expected 68 points");
    const std::size_t dim = lm[0].is_array() ? lm[0].size() : 0;
    if (dim != 2 && dim != 3) f.fail("landmarks", "points must have 2 or 3 coordinates");
    Landmarks out = Landmarks::Zero();
    for (int i = 0; i < kLandmarkCount; ++i) {
      const json& p = lm[static_cast<std::size_t>(i)];
      if (!p.is_array() || p.size() != dim) f.fail("landmarks", "points must all have the same dimension");
      for (std::size_t c = 0; c < dim; ++c) out(i, static_cast<int>(c)) = f.number(p[c], "landmarks");
    }
    r.landmarks = out;
    r.landmarks_2d = dim == 2;
  }
  if (j.contains("bbox")) {
    const auto b = f.array("bbox", 4);
    if (b[2] < 0.0 || b[3] < 0.0) f.fail("bbox", "width and height must be non-negative");
    r.bbox = Box{b[0], b[1], b[2], b[3]};
  }
  if (j.contains("rot_cov")) r.rot_cov_features = to_array<6>(f.array("rot_cov", 6));
  if (j.contains("pos_cov")) r.pos_cov_features = to_array<6>(f.array("pos_cov", 6));

  if (j.contains("mask")) {
    const json& m = f.raw("mask");
    if (!m.is_array()) f.fail("mask", "expected a list of label group names");
    std::vector<std::string> names;
    for (const auto& e : m) {
      if (!e.is_string()) f.fail("mask", "expected a list of label group names");
      names.push_back(e.get<std::string>());
    }
    std::sort(names.begin(), names.end());
    auto expected = mask_names(r.mask());
    std::sort(expected.begin(), expected.end());
    if (names != expected) f.fail("mask", "does not match the fields present");
  }
  return r;
}

std::vector<SampleRecord> parse_samples(std::string_view text) {
  std::vector<SampleRecord> out;
  std::size_t line_number = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_number;
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) out.push_back(record_from_json(line, line_number));
    pos = end + 1;
  }
  return out;
}

std::string format_samples(const std::vector<SampleRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r);
    out += '\n';
  }
  return out;
}

std::vector<SampleRecord> read_samples(const std::filesystem::path& path) {
  try {
    return parse_samples(read_text_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_samples(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  write_file_atomic(path, format_samples(records));
}

DatasetMix DatasetMix::make(std::vector<MixEntry> entries, std::vector<double> probs) {
  if (entries.empty()) throw ValidationError("mix: at least one dataset is required");
  if (entries.size() != probs.size()) throw ValidationError("mix: one probability per dataset is required");
  for (const auto& e : entries)
    if (e.size == 0) throw ValidationError("mix: dataset '" + e.name + "' is empty");
  for (double p : probs)
    if (!std::isfinite(p) || p < 0.0) throw ValidationError("mix: probabilities must be non-negative");
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (sum < 0.99 || sum > 1.01) throw ValidationError("mix: probabilities must sum to 1");
  DatasetMix mix;
  mix.renormalized = std::abs(sum - 1.0) > 1e-12;
  if (mix.renormalized)
    for (double& p : probs) p /= sum;
  mix.entries = std::move(entries);
  mix.probs = std::move(probs);
  return mix;
}

MixSpec parse_mix_spec(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("mix: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("datasets") || !j.contains("probs"))
    throw ValidationError("mix: expected an object with 'datasets' and 'probs'");
  const FieldReader f(j, 0);
  const json& ds = j.at("datasets");
  if (!ds.is_array()) f.fail("datasets", "expected an array");

  std::vector<MixEntry> entries;
  for (const auto& d : ds) {
    MixEntry e;
    std::string path;
    if (d.is_string()) {
      path = d.get<std::string>();
      e.name = path;
    } else if (d.is_object() && d.contains("name") && d.at("name").is_string()) {
      e.name = d.at("name").get<std::string>();
      if (d.contains("size")) {
        if (!d.at("size").is_number_integer() || d.at("size").get<std::int64_t>() < 0)
          f.fail("datasets", "size of '" + e.name + "' must be a non-negative integer");
        e.size = d.at("size").get<std::uint64_t>();
      } else if (d.contains("path") && d.at("path").is_string()) {
        path = d.at("path").get<std::string>();
      } else {
        f.fail("datasets", "entry '" + e.name + "' needs a size or a path");
      }
    } else {
      f.fail("datasets", "entries must be paths or objects with a name");
    }
    if (!path.empty()) {
      std::filesystem::path p(path);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      e.size = read_samples(p).size();
    }
    entries.push_back(std::move(e));
  }

  const json& pr = j.at("probs");
  if (!pr.is_array()) f.fail("probs", "expected an array");
  std::vector<double> probs;
  for (const auto& p : pr) probs.push_back(f.number(p, "probs"));

  MixSpec spec;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) f.fail("seed", "expected a non-negative integer");
    spec.seed = j.at("seed").get<std::uint64_t>();
  }
  spec.mix = DatasetMix::make(std::move(entries), std::move(probs));
  return spec;
}

MixSampler::MixSampler(DatasetMix mix, std::uint64_t seed)
    : mix_(DatasetMix::make(std::move(mix.entries), std::move(mix.probs))), rng_(seed) {
  double acc = 0.0;
  for (double p : mix_.probs) cumulative_.push_back(acc += p);
}

std::pair<std::size_t, std::uint64_t> MixSampler::next() {
  const double u = rng_.uniform() * cumulative_.back();
  std::size_t d = 0;
  while (d + 1 < cumulative_.size() && !(u < cumulative_[d])) ++d;
  return {d, rng_.uniform_index(mix_.entries[d].size)};
}

}  // namespace headpose
