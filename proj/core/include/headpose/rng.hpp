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
#include <random>
#include <string_view>

namespace headpose {

/// Source of the two primitive draws every stochastic routine is written
/// against. Tests substitute degenerate sources to pin all randomness.
class RandomSource {
 public:
  virtual ~RandomSource() = default;

  /// Uniform on [0, 1).
  virtual double uniform() = 0;
  /// Standard normal.
  virtual double normal() = 0;

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
};

/// mt19937_64 stream with hand-written distributions, so that draw sequences
/// are identical across standard library implementations.
class SeededRng final : public RandomSource {
 public:
  explicit SeededRng(std::uint64_t seed);

  /// Independent stream for a sub-task (sample index, trial, ...). The same
  /// (seed, index) pair always yields the same stream.
  SeededRng split(std::uint64_t index) const;
  std::uint64_t seed() const { return seed_; }

  double uniform() override;
  double normal() override;
  using RandomSource::normal;
  using RandomSource::uniform;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
/// FNV-1a, 64 bit.
std::uint64_t hash_string(std::string_view s);

}  // namespace headpose
