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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "headpose/image.hpp"
#include "headpose/sample.hpp"

namespace headpose {

/// Shortest signed difference a - b on the circle, degrees.
double wrap_degrees(double a, double b);

/// Drops records with any |yaw|, |pitch| or |roll| above the limit.
std::vector<SampleRecord> filter_protocol(const std::vector<SampleRecord>& records, double limit_deg = 99.0);

/// For each ground truth, the prediction with the same id. Extra predictions
/// are ignored; missing ones are listed in the ValidationError.
std::vector<const SampleRecord*> align_by_id(const std::vector<SampleRecord>& preds,
                                             const std::vector<SampleRecord>& gts);

struct SampleErrors {
  std::string id;
  double yaw = 0.0, pitch = 0.0, roll = 0.0;
  double geodesic = 0.0;
};

/// Degrees.
struct EulerMetrics {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

std::vector<SampleErrors> per_sample_errors(const std::vector<SampleRecord>& preds,
                                            const std::vector<SampleRecord>& gts);
EulerMetrics euler_metrics(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts);
/// Mean geodesic error in degrees.
double geodesic_metric(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts);

struct NmeResult {
  /// Percent.
  double nme = 0.0;
  std::size_t used = 0;
  /// Samples whose ground-truth box has no area.
  std::size_t skipped = 0;
};

NmeResult nme2d(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts);

struct NoiseSweepPoint {
  double sigma = 0.0;
  /// Degrees.
  double spread = 0.0;
  double error_of_mean = 0.0;
};

struct NoiseTrialSet {
  double sigma = 0.0;
  std::vector<std::vector<SampleRecord>> trials;
};

std::vector<NoiseSweepPoint> noise_sweep(const std::vector<NoiseTrialSet>& sets,
                                         const std::vector<SampleRecord>& gts);

inline const std::vector<double> kDefaultSweepSigmas = {0.0, 2.0, 4.0, 8.0, 16.0, 32.0};
inline constexpr int kDefaultSweepTrials = 16;

struct NamedImage {
  std::string id;
  GrayImage image;
};

/// result[trial][image]; the noise of each image depends on (seed, trial, id) only.
std::vector<std::vector<NamedImage>> noise_inject(const std::vector<NamedImage>& images, double sigma,
                                                  int trials, std::uint64_t seed);

struct Correlation {
  double value = 0.0;
  /// False when either variable has zero variance; value is then 0.
  bool defined = false;
};

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Pearson on average ranks.
Correlation spearman(const std::vector<double>& x, const std::vector<double>& y);

struct UncertaintyCorrelation {
  Correlation pearson;
  Correlation spearman;
  /// (Frobenius norm of the rotation covariance, geodesic error in degrees)
  std::vector<std::pair<double, double>> points;
};

UncertaintyCorrelation uncertainty_correlation(const std::vector<SampleRecord>& preds,
                                               const std::vector<SampleRecord>& gts);

struct MetricsReport {
  EulerMetrics euler;
  double geodesic = 0.0;
  std::vector<SampleErrors> samples;
  std::optional<NmeResult> nme;
  std::vector<NoiseSweepPoint> sweep;
  std::optional<UncertaintyCorrelation> correlation;
  /// Effective configuration, echoed into the JSON report.
  std::vector<std::pair<std::string, std::string>> config;
};

MetricsReport make_report(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts);

std::string report_to_json(const MetricsReport& report);
/// One row per sample.
std::string report_to_csv(const MetricsReport& report);
std::string sweep_to_csv(const std::vector<NoiseSweepPoint>& sweep);

}  // namespace headpose
