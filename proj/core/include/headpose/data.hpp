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
#include <utility>
#include <vector>

#include "headpose/rng.hpp"
#include "headpose/sample.hpp"

namespace headpose {

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

/// One JSON object, no trailing newline. Numbers keep full precision.
std::string record_to_json(const SampleRecord& r);
/// `line_number` only feeds error messages.
SampleRecord record_from_json(std::string_view text, std::size_t line_number = 0);

std::vector<SampleRecord> parse_samples(std::string_view text);
std::string format_samples(const std::vector<SampleRecord>& records);

std::vector<SampleRecord> read_samples(const std::filesystem::path& path);
void write_samples(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

struct MixEntry {
  std::string name;
  std::uint64_t size = 0;
};

struct DatasetMix {
  std::vector<MixEntry> entries;
  std::vector<double> probs;
  /// Set when the given probabilities were close to, but not exactly on,
  /// the simplex and had to be rescaled.
  bool renormalized = false;

  /// Throws ValidationError on an empty mix, an empty dataset, negative
  /// probabilities, or a sum outside [0.99, 1.01].
  static DatasetMix make(std::vector<MixEntry> entries, std::vector<double> probs);
};

struct MixSpec {
  DatasetMix mix;
  std::uint64_t seed = 0;
};

/// {"datasets": [...], "probs": [...], "seed": n}. A dataset is either
/// {"name", "size"} or {"name", "path"} (size = number of records in the
/// JSONL file, relative to `base_dir`), or a bare path string.
MixSpec parse_mix_spec(std::string_view text, const std::filesystem::path& base_dir = {});

class MixSampler {
 public:
  MixSampler(DatasetMix mix, std::uint64_t seed);

  /// (dataset index, sample index), both drawn with replacement.
  std::pair<std::size_t, std::uint64_t> next();
  const DatasetMix& mix() const { return mix_; }

 private:
  DatasetMix mix_;
  std::vector<double> cumulative_;
  SeededRng rng_;
};

}  // namespace headpose
