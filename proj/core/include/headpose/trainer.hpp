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
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "headpose/facemodel.hpp"
#include "headpose/losses.hpp"

namespace headpose {

/// Affine map from input features to the raw head output, plus the
/// input-independent NLL scales.
struct LinearHead {
  Eigen::MatrixXd weight;  // head::kSize x input_dim
  HeadOutput bias = HeadOutput::Zero();
  AuxParams aux;

  static LinearHead zeros(int input_dim);
  /// Zero weights; the covariance factor diagonals start at `cov_diag`.
  static LinearHead initial(int input_dim, double cov_diag = 0.1);
  int input_dim() const { return static_cast<int>(weight.cols()); }
  HeadOutput forward(const Eigen::VectorXd& x) const;

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& params);
  /// Throws ValidationError on non-finite parameters.
  void validate() const;
};

std::string head_to_json(const LinearHead& head);
LinearHead head_from_json(std::string_view text);

struct TaskConfig {
  /// Seeds the model and the hidden generator.
  std::uint64_t seed = 0;
  /// Tasks that differ only in `split` share the generator but not the samples.
  std::uint64_t split = 0;
  int n = 4096;
  int input_dim = 8;
  /// When false, labels are exactly the decoded output of the hidden head.
  bool noise = true;
  /// Tangent jitter sd grows linearly with the first input feature, which is
  /// uniform on [-1, 1].
  double jitter_min_deg = 2.0;
  double jitter_max_deg = 20.0;
  double position_noise_sd = 0.01;
  bool landmarks = true;

  void validate() const;
};

struct SyntheticTask {
  TaskConfig config;
  DeformableModel model;
  LinearHead generator;
  std::vector<Eigen::VectorXd> inputs;
  std::vector<SampleRecord> labels;
  /// Planted per-sample tangent sd, radians (0 without noise).
  std::vector<double> jitter_sd;
};

SyntheticTask make_synthetic_task(const TaskConfig& config);

enum class Optimizer { kAdam, kMomentum };

struct TrainConfig {
  std::uint64_t total_samples = 200000;
  int batch_size = 64;
  double peak_lr = 1e-3;
  double warmup_fraction = 1.0 / 20.0;
  double decay_start_fraction = 0.5;
  double decay_factor = 0.1;
  double averaging_start_fraction = 2.0 / 3.0;
  std::uint64_t seed = 0;
  /// When false beta_total is forced to 0.
  bool nll = true;
  LossWeights weights;
  Optimizer optimizer = Optimizer::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.9;
  /// Loss above this (or non-finite) aborts training.
  double divergence_limit = 1e6;

  void validate() const;
  double learning_rate(std::uint64_t samples_seen) const;
};

struct TraceEntry {
  std::uint64_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  /// beta_total-weighted NLL part of `total`.
  double nll = 0.0;
};

struct TrainResult {
  /// Uniform average of the iterates from the averaging start onwards.
  LinearHead head;
  LinearHead last;
  std::vector<TraceEntry> trace;
  std::uint64_t averaged_iterates = 0;
};

TotalLossOptions loss_options(const SyntheticTask& task, const TrainConfig& config);

/// Mean total loss over every sample of the task.
double evaluate_loss(const LinearHead& head, const SyntheticTask& task, const TotalLossOptions& options);

/// Throws RuntimeFailure on divergence.
TrainResult train(const LinearHead& init, const SyntheticTask& task, const TrainConfig& config);

/// Frobenius norm of the predicted rotation covariance.
double predicted_rotation_uncertainty(const LinearHead& head, const Eigen::VectorXd& x);

std::string trace_to_csv(const std::vector<TraceEntry>& trace);

}  // namespace headpose
