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
#include "headpose/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "headpose/error.hpp"
#include "headpose/rng.hpp"
#include "json.hpp"

namespace headpose {
namespace {

constexpr int kOut = head::kSize;

void fill_normal(Eigen::Ref<Eigen::MatrixXd> block, RandomSource& rng, double sd) {
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = rng.normal(0.0, sd);
}

}  // namespace

LinearHead LinearHead::zeros(int input_dim) {
  if (input_dim < 1) throw ValidationError("linear head: input dimension must be positive");
  LinearHead h;
  h.weight = Eigen::MatrixXd::Zero(kOut, input_dim);
  return h;
}

LinearHead LinearHead::initial(int input_dim, double cov_diag) {
  LinearHead h = zeros(input_dim);
  for (int i : {0, 2, 5}) {
    h.bias[head::kRotCov + i] = cov_diag;
    h.bias[head::kPosCov + i] = cov_diag;
  }
  return h;
}

HeadOutput LinearHead::forward(const Eigen::VectorXd& x) const {
  if (x.size() != weight.cols()) throw ValidationError("linear head: input dimension mismatch");
  return weight * x + bias;
}

Eigen::VectorXd LinearHead::flatten() const {
  const Eigen::Index nw = weight.size();
  Eigen::VectorXd p(nw + kOut + AuxParams::kSize);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(p.data(), kOut,
                                                                                     weight.cols()) = weight;
  p.segment(nw, kOut) = bias;
  p.tail(AuxParams::kSize) = aux.flatten();
  return p;
}

void LinearHead::assign(const Eigen::VectorXd& p) {
  const Eigen::Index nw = weight.size();
  if (p.size() != nw + kOut + AuxParams::kSize) throw ValidationError("linear head: parameter size mismatch");
  weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      p.data(), kOut, weight.cols());
  bias = p.segment(nw, kOut);
  aux = AuxParams::unflatten(p.tail(AuxParams::kSize));
}

void LinearHead::validate() const {
  if (weight.rows() != kOut || weight.cols() < 1) throw ValidationError("linear head: bad weight shape");
  if (!flatten().allFinite()) throw ValidationError("linear head: non-finite parameters");
}

std::string head_to_json(const LinearHead& head) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["input_dim"] = head.input_dim();
  j["output_dim"] = kOut;
  std::vector<double> w;
  for (int r = 0; r < kOut; ++r)
    for (int c = 0; c < head.input_dim(); ++c) w.push_back(head.weight(r, c));
  j["weight"] = w;
  j["bias"] = std::vector<double>(head.bias.data(), head.bias.data() + kOut);
  const Eigen::VectorXd aux = head.aux.flatten();
  j["aux"] = std::vector<double>(aux.data(), aux.data() + aux.size());
  return j.dump() + "\n";
}

LinearHead head_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    const int d = j.at("input_dim").get<int>();
    if (j.at("output_dim").get<int>() != kOut) throw ValidationError("linear head: unexpected output dimension");
    LinearHead h = LinearHead::zeros(d);
    const auto w = j.at("weight").get<std::vector<double>>();
    const auto b = j.at("bias").get<std::vector<double>>();
    const auto a = j.at("aux").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(kOut * d) || b.size() != kOut || a.size() != AuxParams::kSize)
      throw ValidationError("linear head: parameter array sizes do not match the dimensions");
    for (int r = 0; r < kOut; ++r)
      for (int c = 0; c < d; ++c) h.weight(r, c) = w[static_cast<std::size_t>(r * d + c)];
    h.bias = Eigen::Map<const HeadOutput>(b.data());
    h.aux = AuxParams::unflatten(Eigen::Map<const Eigen::VectorXd>(a.data(), AuxParams::kSize));
    h.validate();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("linear head: ") + e.what());
  }
}

void TaskConfig::validate() const {
  if (n < 1) throw ValidationError("task: n must be positive");
  if (input_dim < 2) throw ValidationError("task: input dimension must be at least 2");
  if (!(jitter_min_deg >= 0.0 && jitter_max_deg >= jitter_min_deg))
    throw ValidationError("task: invalid jitter range");
  if (!(position_noise_sd >= 0.0)) throw ValidationError("task: position noise must be non-negative");
}

SyntheticTask make_synthetic_task(const TaskConfig& config) {
  config.validate();
  SyntheticTask task;
  task.config = config;
  task.model = synthetic_model(config.seed);

  SeededRng root(config.seed);
  SeededRng gen_rng = root.split(1);
  const int d = config.input_dim;
  const double per = 1.0 / std::sqrt(static_cast<double>(d - 1));
  LinearHead& g = task.generator;
  g = LinearHead::zeros(d);
  fill_normal(g.weight.middleRows(head::kQuat, 4), gen_rng, 0.3 * per);
  g.bias[head::kQuat + 3] = 1.0;
  fill_normal(g.weight.middleRows(head::kPosSize, 2), gen_rng, 0.2 * per);
  fill_normal(g.weight.middleRows(head::kPosSize + 2, 1), gen_rng, 0.1 * per);
  g.bias[head::kPosSize + 2] = -0.2;
  fill_normal(g.weight.middleRows(head::kShape, kShapeDim), gen_rng, 0.5 * per);
  g.weight.middleRows(head::kBox, 2) = g.weight.middleRows(head::kPosSize, 2);
  g.weight.row(head::kBox + 2) = g.weight.row(head::kPosSize + 2);
  g.weight.row(head::kBox + 3) = g.weight.row(head::kPosSize + 2);
  g.bias[head::kBox + 2] = -0.2 + std::log(1.5);
  g.bias[head::kBox + 3] = -0.2 + std::log(2.0);

  SeededRng data_rng = root.split(2).split(config.split);
  task.inputs.reserve(static_cast<std::size_t>(config.n));
  task.labels.reserve(static_cast<std::size_t>(config.n));
  for (int i = 0; i < config.n; ++i) {
    Eigen::VectorXd x(d);
    const double nu = data_rng.uniform();
    x[0] = 2.0 * nu - 1.0;
    for (int k = 1; k < d; ++k) x[k] = data_rng.normal();
    char id[32];
    std::snprintf(id, sizeof id, "s%06d", i);
    SampleRecord lab = decode_head(g.forward(x), nullptr, id);
    lab.rot_cov_features.reset();
    lab.pos_cov_features.reset();

    double sd = 0.0;
    if (config.noise) {
      sd = deg2rad(config.jitter_min_deg + (config.jitter_max_deg - config.jitter_min_deg) * nu);
      const RotationVector r{data_rng.normal(0.0, sd), data_rng.normal(0.0, sd), data_rng.normal(0.0, sd)};
      lab.rotation = quat_mul(*lab.rotation, exp_map(r));
      lab.pos_size->x += data_rng.normal(0.0, config.position_noise_sd);
      lab.pos_size->y += data_rng.normal(0.0, config.position_noise_sd);
    }
    if (config.landmarks)
      lab.landmarks =
          landmarks68(task.model, *lab.shape, Pose{*lab.rotation, lab.pos_size->x, lab.pos_size->y, lab.pos_size->s});
    task.inputs.push_back(std::move(x));
    task.labels.push_back(std::move(lab));
    task.jitter_sd.push_back(sd);
  }
  return task;
}

void TrainConfig::validate() const {
  weights.validate();
  if (total_samples == 0 || batch_size < 1) throw ValidationError("train: counts must be positive");
  if (!(peak_lr > 0.0)) throw ValidationError("train: learning rate must be positive");
  for (double f : {warmup_fraction, decay_start_fraction, averaging_start_fraction})
    if (!(f > 0.0 && f < 1.0)) throw ValidationError("train: schedule fractions must lie in (0,1)");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ValidationError("train: decay factor must lie in (0,1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("train: moment coefficients must lie in [0,1)");
}

double TrainConfig::learning_rate(std::uint64_t samples_seen) const {
  const auto n = static_cast<double>(total_samples);
  const auto seen = static_cast<double>(samples_seen);
  if (seen >= decay_start_fraction * n) return peak_lr * decay_factor;
  return peak_lr * std::min(1.0, (seen + batch_size) / (warmup_fraction * n));
}

TotalLossOptions loss_options(const SyntheticTask& task, const TrainConfig& config) {
  TotalLossOptions opt;
  opt.weights = config.weights;
  if (!config.nll) opt.weights.beta_total = 0.0;
  opt.model = &task.model;
  return opt;
}

double evaluate_loss(const LinearHead& head, const SyntheticTask& task, const TotalLossOptions& options) {
  constexpr std::size_t kChunk = 256;
  double acc = 0.0;
  std::vector<LossSample> batch;
  for (std::size_t start = 0; start < task.inputs.size(); start += kChunk) {
    const std::size_t end = std::min(task.inputs.size(), start + kChunk);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back({head.forward(task.inputs[i]), &task.labels[i]});
    acc += total_loss(batch, head.aux, options).value * static_cast<double>(end - start);
  }
  return acc / static_cast<double>(task.inputs.size());
}

TrainResult train(const LinearHead& init, const SyntheticTask& task, const TrainConfig& config) {
  config.validate();
  init.validate();
  if (init.input_dim() != task.config.input_dim) throw ValidationError("train: head and task dimensions differ");
  const TotalLossOptions options = loss_options(task, config);
  const LossWeights& w = options.weights;

  LinearHead cur = init;
  Eigen::VectorXd params = cur.flatten();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(params.size());
  const int d = init.input_dim();
  const Eigen::Index nw = static_cast<Eigen::Index>(kOut) * d;

  TrainResult res;
  SeededRng rng = SeededRng(config.seed).split(3);
  const auto bsz = static_cast<std::uint64_t>(config.batch_size);
  const std::uint64_t steps = (config.total_samples + bsz - 1) / bsz;
  const auto avg_start = static_cast<std::uint64_t>(
      std::ceil(config.averaging_start_fraction * static_cast<double>(config.total_samples)));
  res.trace.reserve(steps);

  std::vector<LossSample> batch(bsz);
  Eigen::VectorXd grad(params.size());
  for (std::uint64_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> idx(bsz);
    for (std::uint64_t b = 0; b < bsz; ++b) {
      idx[b] = static_cast<std::size_t>(rng.uniform_index(task.inputs.size()));
      batch[b] = {cur.forward(task.inputs[idx[b]]), &task.labels[idx[b]]};
    }
    const TotalLoss tl = total_loss(batch, cur.aux, options);
    const LossTerms& t = tl.terms;
    const double nll = w.beta_total *
                       (w.beta_rot * t.nll_rot + w.beta_p * t.nll_pos + w.beta_phi * t.nll_shape +
                        w.beta_xi * t.nll_landmarks + w.beta_bb * t.nll_bbox) /
                       static_cast<double>(bsz);
    const double lr = config.learning_rate(step * bsz);
    res.trace.push_back({step, lr, tl.value, nll});
    if (!std::isfinite(tl.value) || tl.value > config.divergence_limit) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "training diverged at step %llu (loss %g)",
                    static_cast<unsigned long long>(step), tl.value);
      throw RuntimeFailure(msg);
    }

    grad.setZero();
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(grad.data(), kOut, d);
    for (std::uint64_t b = 0; b < bsz; ++b) {
      gw.noalias() += tl.grad_outputs[b] * task.inputs[idx[b]].transpose();
      grad.segment(nw, kOut) += tl.grad_outputs[b];
    }
    grad.tail(AuxParams::kSize) = tl.grad_aux.flatten();

    if (config.optimizer == Optimizer::kAdam) {
      m1 = config.beta1 * m1 + (1.0 - config.beta1) * grad;
      m2 = config.beta2 * m2 + (1.0 - config.beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step + 1));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step + 1));
      params.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + config.adam_eps);
    } else {
      m1 = config.momentum * m1 + grad;
      params -= lr * m1;
    }
    cur.assign(params);

    if ((step + 1) * bsz >= avg_start) {
      ++res.averaged_iterates;
      avg += (params - avg) / static_cast<double>(res.averaged_iterates);
    }
  }

  res.last = cur;
  res.head = cur;
  if (res.averaged_iterates > 0) res.head.assign(avg);
  return res;
}

double predicted_rotation_uncertainty(const LinearHead& head, const Eigen::VectorXd& x) {
  const HeadOutput out = head.forward(x);
  std::array<double, 6> m{};
  for (int i = 0; i < 6; ++i) m[i] = out[head::kRotCov + i];
  return covariance_from_features(m).matrix.norm();
}

std::string trace_to_csv(const std::vector<TraceEntry>& trace) {
  std::string out = "step,lr,total,nll\n";
  char buf[128];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(e.step), e.lr,
                  e.total, e.nll);
    out += buf;
  }
  return out;
}

}  // namespace headpose
