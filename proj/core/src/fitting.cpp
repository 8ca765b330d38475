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
#include "headpose/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "headpose/error.hpp"
#include "headpose/losses.hpp"
#include "headpose/rng.hpp"

namespace headpose {
namespace {

const double kLog2Pi = std::log(2.0 * kPi);

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// log N(x | mean_k, diag(var_k)) for every component.
Eigen::VectorXd component_log_densities(const GaussianMixture& g, const Eigen::VectorXd& x) {
  Eigen::VectorXd out(g.components());
  for (int k = 0; k < g.components(); ++k) {
    const Eigen::ArrayXd var = g.variances.row(k).transpose().array();
    const Eigen::ArrayXd d = x.array() - g.means.row(k).transpose().array();
    out[k] = -0.5 * ((d * d / var).sum() + (var.log()).sum() + g.dim() * kLog2Pi);
  }
  return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double inverse_smoothclip(double s) { return s >= 1.0 ? s - 1.0 : std::log(s); }

}  // namespace

void GaussianMixture::validate() const {
  const int k = components();
  if (k < 1) throw ValidationError("mixture needs at least one component");
  if (means.rows() != k || variances.rows() != k || variances.cols() != means.cols())
    throw ValidationError("mixture parameter shapes disagree");
  if (std::abs(weights.sum() - 1.0) > 1e-9 || (weights.array() < 0.0).any())
    throw ValidationError("mixture weights must lie on the simplex");
  if (!(variances.array() > 0.0).all()) throw ValidationError("mixture variances must be positive");
  if (!means.allFinite() || !variances.allFinite()) throw ValidationError("mixture is not finite");
}

double GaussianMixture::nll(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
  Eigen::VectorXd logp = component_log_densities(*this, x);
  logp.array() += weights.array().log();
  const double lse = log_sum_exp(logp);
  if (grad != nullptr) {
    grad->setZero(x.size());
    for (int k = 0; k < components(); ++k) {
      const double r = std::exp(logp[k] - lse);
      if (r == 0.0) continue;
      grad->array() +=
          r * (x.array() - means.row(k).transpose().array()) / variances.row(k).transpose().array();
    }
  }
  return -lse;
}

double GaussianMixture::log_likelihood(const Eigen::MatrixXd& samples) const {
  double acc = 0.0;
  for (Eigen::Index n = 0; n < samples.rows(); ++n) acc -= nll(samples.row(n).transpose());
  return acc;
}

Eigen::VectorXd GaussianMixture::sample(RandomSource& rng) const {
  validate();
  const double u = rng.uniform() * weights.sum();
  int k = 0;
  double acc = weights[0];
  while (k + 1 < components() && !(u < acc)) acc += weights[++k];
  Eigen::VectorXd x(dim());
  for (int d = 0; d < dim(); ++d) x[d] = rng.normal(means(k, d), std::sqrt(variances(k, d)));
  return x;
}

GaussianMixture GaussianMixture::single(const Eigen::VectorXd& mean,
                                        const Eigen::VectorXd& variance) {
  GaussianMixture g;
  g.weights = Eigen::VectorXd::Ones(1);
  g.means = mean.transpose();
  g.variances = variance.transpose();
  return g;
}

std::string gmm_to_json(const GaussianMixture& gmm) {
  nlohmann::json j;
  j["weights"] = std::vector<double>(gmm.weights.data(), gmm.weights.data() + gmm.weights.size());
  j["means"] = nlohmann::json::array();
  j["variances"] = nlohmann::json::array();
  for (int k = 0; k < gmm.components(); ++k) {
    std::vector<double> m(gmm.dim()), v(gmm.dim());
    for (int d = 0; d < gmm.dim(); ++d) {
      m[d] = gmm.means(k, d);
      v[d] = gmm.variances(k, d);
    }
    j["means"].push_back(m);
    j["variances"].push_back(v);
  }
  return j.dump();
}

GaussianMixture gmm_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("mixture JSON: ") + e.what());
  }
  GaussianMixture g;
  try {
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto m = j.at("means").get<std::vector<std::vector<double>>>();
    const auto v = j.at("variances").get<std::vector<std::vector<double>>>();
    const int k = static_cast<int>(w.size());
    if (k == 0 || static_cast<int>(m.size()) != k || static_cast<int>(v.size()) != k)
      throw ValidationError("mixture JSON: component counts disagree");
    const int d = static_cast<int>(m[0].size());
    g.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), k);
    g.means.resize(k, d);
    g.variances.resize(k, d);
    for (int i = 0; i < k; ++i) {
      if (static_cast<int>(m[i].size()) != d || static_cast<int>(v[i].size()) != d)
        throw ValidationError("mixture JSON: ragged mean/variance rows");
      for (int c = 0; c < d; ++c) {
        g.means(i, c) = m[i][c];
        g.variances(i, c) = v[i][c];
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("mixture JSON: ") + e.what());
  }
  g.validate();
  return g;
}

GmmFitResult gmm_fit(const Eigen::MatrixXd& x, int k, std::uint64_t seed,
                     const GmmFitOptions& options) {
  const auto n = static_cast<int>(x.rows());
  const auto d = static_cast<int>(x.cols());
  if (k < 1) throw ValidationError("gmm_fit: need at least one component");
  if (n < k) throw ValidationError("gmm_fit: fewer samples than components");
  if (!x.allFinite()) throw ValidationError("gmm_fit: samples must be finite");

  // k-means++ seeding.
  SeededRng rng(seed);
  Eigen::MatrixXd centers(k, d);
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.uniform_index(n)));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2[pick];
        if (u < 0.0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.uniform_index(n));
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> label(n, 0);
  for (int it = 0; it < std::max(1, options.kmeans_iterations); ++it) {
    for (int i = 0; i < n; ++i) {
      Eigen::Index best;
      (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      label[i] = static_cast<int>(best);
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
      sum.row(label[i]) += x.row(i);
      count[label[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (count[c] > 0.0) centers.row(c) = sum.row(c) / count[c];
  }

  // Hard-assignment initial parameters.
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (int i = 0; i < n; ++i) resp(i, label[i]) = 1.0;

  GaussianMixture g;
  g.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
  g.means = centers;
  g.variances = Eigen::MatrixXd::Ones(k, d);
  const Eigen::RowVectorXd global_var =
      ((x.rowwise() - x.colwise().mean()).array().square().colwise().sum() / n)
          .cwiseMax(options.variance_floor);

  auto m_step = [&]() {
    const Eigen::VectorXd nk = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      if (nk[c] < 1e-12) {
        // Empty component keeps its mean and falls back to the global spread.
        g.variances.row(c) = global_var;
        continue;
      }
      g.means.row(c) = (resp.col(c).transpose() * x) / nk[c];
      const Eigen::MatrixXd diff = x.rowwise() - g.means.row(c);
      g.variances.row(c) =
          ((resp.col(c).asDiagonal() * diff.array().square().matrix()).colwise().sum() / nk[c])
              .cwiseMax(options.variance_floor);
    }
    g.weights = nk.cwiseMax(1e-300) / nk.cwiseMax(1e-300).sum();
  };

  auto e_step = [&]() {
    double ll = 0.0;
    const Eigen::ArrayXd logw = g.weights.array().log();
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd lp = component_log_densities(g, x.row(i).transpose());
      lp.array() += logw;
      const double lse = log_sum_exp(lp);
      ll += lse;
      resp.row(i) = (lp.array() - lse).exp().matrix().transpose();
    }
    return ll;
  };

  m_step();
  GmmFitResult out;
  double ll = e_step();
  out.log_likelihood.push_back(ll);
  for (int it = 0; it < options.max_iterations; ++it) {
    m_step();
    const double next = e_step();
    out.log_likelihood.push_back(next);
    const bool done = next - ll <= options.tolerance * std::abs(ll);
    ll = next;
    if (done) break;
  }
  out.mixture = g;
  return out;
}

void FitProblem::validate() const {
  if (model == nullptr) throw ValidationError("fit problem has no deformable model");
  model->validate();
  int active = 0;
  for (double c : confidence) {
    if (!(c >= 0.0) || !std::isfinite(c))
      throw ValidationError("landmark confidence must be finite and non-negative");
    active += c > 0.0;
  }
  if (active < 6) throw ValidationError("fit problem needs at least 6 confident landmarks");
  if (!landmarks2d.allFinite()) throw ValidationError("landmarks must be finite");
  if (!(prior_pose_weight >= 0.0)) throw ValidationError("prior pose weight must be non-negative");
  shape_prior.validate();
  if (shape_prior.dim() != kShapeDim)
    throw ValidationError("shape prior must be 50-dimensional");
}

FitParams FitParams::from_pose(const Pose& pose, const ShapeCoeffs& coeffs) {
  FitParams p;
  p.qraw = pose.q.vec();
  p.tx = pose.tx;
  p.ty = pose.ty;
  p.size_raw = inverse_smoothclip(pose.s);
  p.phi = coeffs;
  return p;
}

Pose FitParams::pose() const {
  return {Quaternion::from_vec(qraw.normalized()), tx, ty, smoothclip(size_raw)};
}

Eigen::VectorXd FitParams::flatten() const {
  Eigen::VectorXd v(kSize);
  v.head<4>() = qraw;
  v[4] = tx;
  v[5] = ty;
  v[6] = size_raw;
  v.tail<kShapeDim>() = phi;
  return v;
}

FitParams FitParams::unflatten(const Eigen::VectorXd& v) {
  FitParams p;
  p.qraw = v.head<4>();
  p.tx = v[4];
  p.ty = v[5];
  p.size_raw = v[6];
  p.phi = v.tail<kShapeDim>();
  return p;
}

std::array<double, kLandmarkCount> visibility_weights(const Quaternion& prior_q,
                                                      const DeformableModel& model) {
  const auto normals = landmark_normals(model);
  const Eigen::Matrix3d r = to_rotation_matrix(prior_q.normalized());
  std::array<double, kLandmarkCount> w{};
  for (int i = 0; i < kLandmarkCount; ++i) {
    // The camera looks along +z, so surfaces facing it have negative z normals.
    const double facing = -(r.row(2).dot(normals.row(i)));
    w[i] = std::clamp(facing, 0.0, 1.0);
  }
  return w;
}

std::array<double, kLandmarkCount> effective_landmark_weights(const FitProblem& problem,
                                                              const FitConfig& config) {
  std::array<double, kLandmarkCount> w = problem.confidence;
  if (config.use_visibility) {
    const auto vis = visibility_weights(problem.prior_pose.q, *problem.model);
    for (int i = 0; i < kLandmarkCount; ++i) w[i] *= vis[i];
  }
  return w;
}

FitObjective evaluate_fit_objective(const FitParams& params, const FitProblem& problem,
                                    const FitConfig& config,
                                    std::span<const double, kLandmarkCount> weights) {
  const DeformableModel& model = *problem.model;
  const Pose pose = params.pose();
  FitObjective out;
  out.grad = Eigen::VectorXd::Zero(FitParams::kSize);

  const Landmarks proj = landmarks68(model, params.phi, pose);
  Landmarks grad_lm = Landmarks::Zero();
  for (int i = 0; i < kLandmarkCount; ++i) {
    const double w = config.landmark_weight * weights[i];
    if (w == 0.0) continue;
    const double dx = proj(i, 0) - problem.landmarks2d(i, 0);
    const double dy = proj(i, 1) - problem.landmarks2d(i, 1);
    out.landmarks += weights[i] * (dx * dx + dy * dy);
    grad_lm(i, 0) = 2.0 * w * dx;
    grad_lm(i, 1) = 2.0 * w * dy;
  }
  const LandmarkBackward back = landmarks68_backward(model, params.phi, pose, grad_lm);
  Eigen::Vector4d grad_q = back.dq;

  const Quaternion& prior_q = problem.prior_pose.q;
  const double qd = dot(pose.q, prior_q);
  out.rotation_prior = 1.0 - qd * qd;
  grad_q += problem.prior_pose_weight * (-2.0 * qd) * prior_q.vec();

  Eigen::VectorXd grad_phi;
  out.mixture = problem.shape_prior.nll(params.phi, &grad_phi);

  const double qn = params.qraw.norm();
  out.norm = (1.0 - qn) * (1.0 - qn);

  const double tau = config.barrier_temperature;
  out.barrier = tau * softplus(-pose.s / tau);

  out.value = config.landmark_weight * out.landmarks + problem.prior_pose_weight * out.rotation_prior +
              config.mixture_weight * out.mixture + config.norm_weight * out.norm +
              config.barrier_weight * out.barrier;

  out.grad.head<4>() = normalization_jacobian(params.qraw).transpose() * grad_q +
                       config.norm_weight * (-2.0 * (1.0 - qn) / qn) * params.qraw;
  out.grad[4] = back.dtx;
  out.grad[5] = back.dty;
  const double ds = back.ds - config.barrier_weight * sigmoid(-pose.s / tau);
  out.grad[6] = ds * smoothclip_derivative(params.size_raw);
  out.grad.tail<kShapeDim>() = back.dphi + config.mixture_weight * grad_phi;
  return out;
}

FitObjective fit_objective(const Pose& pose, const ShapeCoeffs& coeffs, const FitProblem& problem,
                           const FitConfig& config) {
  problem.validate();
  const auto weights = effective_landmark_weights(problem, config);
  return evaluate_fit_objective(FitParams::from_pose(pose, coeffs), problem, config, weights);
}

namespace {

double landmark_rmse(const FitProblem& problem, const Pose& pose, const ShapeCoeffs& coeffs) {
  const Landmarks proj = landmarks68(*problem.model, coeffs, pose);
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i < kLandmarkCount; ++i) {
    if (problem.confidence[i] <= 0.0) continue;
    acc += (proj.row(i).head<2>() - problem.landmarks2d.row(i)).squaredNorm();
    ++count;
  }
  return std::sqrt(acc / std::max(count, 1));
}

double annotation_diagonal(const FitProblem& problem) {
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (int i = 0; i < kLandmarkCount; ++i) {
    if (problem.confidence[i] <= 0.0) continue;
    lo = lo.cwiseMin(problem.landmarks2d.row(i).transpose());
    hi = hi.cwiseMax(problem.landmarks2d.row(i).transpose());
  }
  return (hi - lo).norm();
}

}  // namespace

FitResult fit(const FitProblem& problem, const Pose& init_pose, const ShapeCoeffs& init_coeffs,
              const FitConfig& config) {
  problem.validate();
  if (!(init_pose.s > 0.0) || !init_coeffs.allFinite() || !(init_pose.q.norm() > 0.0))
    throw ValidationError("fit: invalid initial pose or coefficients");
  const auto weights = effective_landmark_weights(problem, config);
  auto evaluate = [&](const Eigen::VectorXd& x) {
    return evaluate_fit_objective(FitParams::unflatten(x), problem, config, weights);
  };

  Eigen::VectorXd x = FitParams::from_pose(init_pose, init_coeffs).flatten();
  FitObjective cur = evaluate(x);
  FitResult result;
  result.objective_trace.push_back(cur.value);

  double step = 1.0 / std::max(1.0, cur.grad.norm());
  int it = 0;
  for (; it < config.max_iterations; ++it) {
    const double gnorm2 = cur.grad.squaredNorm();
    if (std::sqrt(gnorm2) < config.gradient_tolerance) {
      result.converged = true;
      break;
    }
    double trial = step;
    Eigen::VectorXd next_x;
    FitObjective next;
    bool accepted = false;
    while (trial * std::sqrt(gnorm2) >= config.step_tolerance) {
      next_x = x - trial * cur.grad;
      next = evaluate(next_x);
      if (next.value <= cur.value - config.armijo * trial * gnorm2) {
        accepted = true;
        break;
      }
      trial *= config.shrink;
    }
    if (!accepted) {
      result.converged = true;  // no step above the length tolerance decreases the objective
      break;
    }
    const Eigen::VectorXd s = next_x - x;
    const Eigen::VectorXd y = next.grad - cur.grad;
    const double sy = s.dot(y);
    step = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * trial;
    step = std::clamp(step, 1e-12, 1e6);
    x = next_x;
    cur = std::move(next);
    result.objective_trace.push_back(cur.value);
    if (s.norm() < config.step_tolerance) {
      result.converged = true;
      ++it;
      break;
    }
  }

  const FitParams best = FitParams::unflatten(x);
  result.pose = best.pose();
  result.pose.q = result.pose.q.canonical();
  result.coeffs = best.phi;
  result.final_objective = cur.value;
  result.iterations = it;
  result.gradient_norm = cur.grad.norm();
  result.landmark_rmse = landmark_rmse(problem, result.pose, result.coeffs);
  result.failed = !result.converged ||
                  result.landmark_rmse > config.max_rmse_fraction * annotation_diagonal(problem);
  return result;
}

SyntheticFitCase make_synthetic_fit_case(const DeformableModel& model, const GaussianMixture& prior,
                                         RandomSource& rng, double perturb_deg, double max_angle_deg,
                                         double landmark_noise_sd) {
  if (!(perturb_deg >= 0.0) || !(max_angle_deg >= 0.0) || !(landmark_noise_sd >= 0.0))
    throw ValidationError("synthetic fit case: angles and noise must be non-negative");
  SyntheticFitCase c;
  const double a = deg2rad(max_angle_deg);
  c.truth.q = from_euler({rng.uniform(-a, a), rng.uniform(-a, a), rng.uniform(-a, a)});
  c.truth.tx = rng.uniform(-0.2, 0.2);
  c.truth.ty = rng.uniform(-0.2, 0.2);
  c.truth.s = rng.uniform(0.4, 0.8);
  c.truth_coeffs = prior.sample(rng);

  const Landmarks lm = landmarks68(model, c.truth_coeffs, c.truth);
  FitProblem& p = c.problem;
  p.model = &model;
  p.shape_prior = prior;
  p.confidence.fill(1.0);
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int d = 0; d < 2; ++d) p.landmarks2d(i, d) = lm(i, d) + rng.normal(0.0, landmark_noise_sd);

  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const Quaternion delta = exp_map(RotationVector::from_vec(deg2rad(perturb_deg) * axis));
  p.prior_pose.q = quat_mul(c.truth.q, delta);
  p.prior_pose.tx = c.truth.tx + rng.normal(0.0, 0.02);
  p.prior_pose.ty = c.truth.ty + rng.normal(0.0, 0.02);
  p.prior_pose.s = c.truth.s * (1.0 + rng.normal(0.0, 0.05));
  return c;
}

}  // namespace headpose
