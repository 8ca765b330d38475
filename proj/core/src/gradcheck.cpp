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
#include "headpose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>

#include <Eigen/Core>

#include "headpose/error.hpp"
#include "headpose/facemodel.hpp"
#include "headpose/fitting.hpp"
#include "headpose/losses.hpp"
#include "headpose/rng.hpp"

namespace headpose {
namespace {

using Vec = Eigen::VectorXd;

struct Probe {
  Vec x;
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
};

using ProbeFactory = std::function<Probe(SeededRng&)>;

Vec normal_vec(SeededRng& rng, Eigen::Index n, double sd = 1.0) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal(0.0, sd);
  return v;
}

Quaternion random_unit(SeededRng& rng) {
  const Eigen::Vector4d v = normal_vec(rng, 4);
  return Quaternion::from_vec(v / v.norm());
}

template <int N>
std::span<const double, N> fixed(const Vec& v, Eigen::Index offset = 0) {
  return std::span<const double, N>(v.data() + offset, N);
}

std::span<const double> dyn(const Vec& v, Eigen::Index offset, Eigen::Index n) {
  return {v.data() + offset, static_cast<std::size_t>(n)};
}

// Cholesky-factor features of a well-conditioned covariance, so that finite
// differences are not swamped by curvature.
Vec covariance_features(SeededRng& rng) {
  Vec m = normal_vec(rng, 6, 0.3);
  for (int i : {0, 2, 5}) m[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.3, 1.5);
  return m;
}

PosSize random_pos_size(SeededRng& rng) { return {rng.normal(), rng.normal(), rng.uniform(0.2, 2.0)}; }

Box random_box(SeededRng& rng) {
  return {rng.normal(), rng.normal(), rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
}

// Relative rotation of qhat against q kept well below pi.
Vec quat_features_near(SeededRng& rng, const Quaternion& q) {
  while (true) {
    Vec z = normal_vec(rng, 4);
    if (geodesic_error(quat_from_features(fixed<4>(z)), q) < 0.8 * kPi) return z;
  }
}

Landmarks random_landmarks(SeededRng& rng, double sd = 1.0) {
  Landmarks l;
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c) l(i, c) = rng.normal(0.0, sd);
  return l;
}

// Labels whose L1 residuals against `pred` stay at least 1e-3 away from zero.
Landmarks labels_away_from(SeededRng& rng, const Landmarks& pred) {
  Landmarks l = random_landmarks(rng);
  for (int i = 0; i < kLandmarkCount; ++i)
    for (int c = 0; c < 3; ++c)
      if (std::abs(l(i, c) - pred(i, c)) < 1e-3) l(i, c) = pred(i, c) + (l(i, c) >= pred(i, c) ? 0.1 : -0.1);
  return l;
}

Landmarks as_landmarks(const Vec& v, Eigen::Index offset) {
  Landmarks l;
  Eigen::Map<Eigen::Matrix<double, 3 * kLandmarkCount, 1>>(l.data()) = v.segment<3 * kLandmarkCount>(offset);
  return l;
}

LandmarkWeights random_landmark_weights(SeededRng& rng) {
  LandmarkWeights w = default_landmark_weights();
  for (double& x : w)
    if (x > 0.0) x = rng.uniform(0.1, 1.0);
  return w;
}

const DeformableModel& shared_model() {
  static const DeformableModel model = synthetic_model(7);
  return model;
}

std::vector<std::pair<const char*, ProbeFactory>> make_factories() {
  std::vector<std::pair<const char*, ProbeFactory>> f;

  f.emplace_back("rot_loss", [](SeededRng& rng) {
    const Quaternion q = random_unit(rng);
    return Probe{normal_vec(rng, 4),
                 [q](const Vec& z) { return rot_loss(quat_from_features(fixed<4>(z)), q); },
                 [q](const Vec& z) { return rot_loss_grad(fixed<4>(z), q).grad; }};
  });

  f.emplace_back("rot_nll", [](SeededRng& rng) {
    const Quaternion q = random_unit(rng);
    Vec x(10);
    x << quat_features_near(rng, q), covariance_features(rng);
    return Probe{x,
                 [q](const Vec& v) {
                   return rot_nll(quat_from_features(fixed<4>(v)), q, covariance_from_features(fixed<6>(v, 4)));
                 },
                 [q](const Vec& v) { return rot_nll_grad(fixed<4>(v), fixed<6>(v, 4), q).grad; }};
  });

  f.emplace_back("pos_size_loss", [](SeededRng& rng) {
    const PosSize p = random_pos_size(rng);
    return Probe{normal_vec(rng, 3),
                 [p](const Vec& v) { return pos_size_loss(pos_size_from_features(fixed<3>(v)), p); },
                 [p](const Vec& v) { return pos_size_loss_grad(fixed<3>(v), p).grad; }};
  });

  f.emplace_back("pos_size_nll", [](SeededRng& rng) {
    const PosSize p = random_pos_size(rng);
    Vec x(9);
    x << normal_vec(rng, 3), covariance_features(rng);
    return Probe{x,
                 [p](const Vec& v) {
                   return pos_size_nll(pos_size_from_features(fixed<3>(v)), p,
                                       covariance_from_features(fixed<6>(v, 3)));
                 },
                 [p](const Vec& v) { return pos_size_nll_grad(fixed<3>(v), fixed<6>(v, 3), p).grad; }};
  });

  f.emplace_back("shape_loss", [](SeededRng& rng) {
    const Vec phi = normal_vec(rng, kShapeDim);
    return Probe{normal_vec(rng, kShapeDim),
                 [phi](const Vec& v) { return shape_loss(dyn(v, 0, kShapeDim), dyn(phi, 0, kShapeDim)); },
                 [phi](const Vec& v) { return shape_loss_grad(dyn(v, 0, kShapeDim), dyn(phi, 0, kShapeDim)).grad; }};
  });

  f.emplace_back("shape_nll", [](SeededRng& rng) {
    const Vec phi = normal_vec(rng, kShapeDim);
    return Probe{normal_vec(rng, 2 * kShapeDim),
                 [phi](const Vec& v) {
                   Vec sigma(kShapeDim);
                   for (int i = 0; i < kShapeDim; ++i) sigma[i] = positive_scale(v[kShapeDim + i]);
                   return shape_nll(dyn(v, 0, kShapeDim), dyn(phi, 0, kShapeDim), dyn(sigma, 0, kShapeDim));
                 },
                 [phi](const Vec& v) {
                   return shape_nll_grad(dyn(v, 0, kShapeDim), dyn(v, kShapeDim, kShapeDim), dyn(phi, 0, kShapeDim))
                       .grad;
                 }};
  });

  for (const bool two_d : {false, true}) {
    f.emplace_back(two_d ? "landmark_loss_2d" : "landmark_loss", [two_d](SeededRng& rng) {
      const Landmarks pred = random_landmarks(rng);
      const Landmarks xi = labels_away_from(rng, pred);
      const LandmarkWeights w = random_landmark_weights(rng);
      Vec x(3 * kLandmarkCount);
      Eigen::Map<Eigen::Matrix<double, 3 * kLandmarkCount, 1>>(x.data()) =
          Eigen::Map<const Eigen::Matrix<double, 3 * kLandmarkCount, 1>>(pred.data());
      return Probe{x, [=](const Vec& v) { return landmark_loss(as_landmarks(v, 0), xi, w, two_d); },
                   [=](const Vec& v) { return landmark_loss_grad(as_landmarks(v, 0), xi, w, two_d).grad; }};
    });
    f.emplace_back(two_d ? "landmark_nll_2d" : "landmark_nll", [two_d](SeededRng& rng) {
      constexpr int kL = 3 * kLandmarkCount;
      const Landmarks pred = random_landmarks(rng);
      const Landmarks xi = labels_away_from(rng, pred);
      const LandmarkWeights w = random_landmark_weights(rng);
      Vec x(2 * kL);
      x.head<kL>() = Eigen::Map<const Eigen::Matrix<double, kL, 1>>(pred.data());
      x.tail<kL>() = normal_vec(rng, kL, 0.7);
      return Probe{x,
                   [=](const Vec& v) {
                     Landmarks scale = as_landmarks(v, kL);
                     for (int i = 0; i < kLandmarkCount; ++i)
                       for (int c = 0; c < 3; ++c) scale(i, c) = positive_scale(scale(i, c));
                     return landmark_nll(as_landmarks(v, 0), xi, scale, w, two_d);
                   },
                   [=](const Vec& v) {
                     return landmark_nll_grad(as_landmarks(v, 0), as_landmarks(v, kL), xi, w, two_d).grad;
                   }};
    });
  }

  f.emplace_back("bbox_loss", [](SeededRng& rng) {
    const Box b = random_box(rng);
    return Probe{normal_vec(rng, 4), [b](const Vec& v) { return bbox_loss(box_from_features(fixed<4>(v)), b); },
                 [b](const Vec& v) { return bbox_loss_grad(fixed<4>(v), b).grad; }};
  });

  f.emplace_back("bbox_nll", [](SeededRng& rng) {
    const Box b = random_box(rng);
    return Probe{normal_vec(rng, 8),
                 [b](const Vec& v) {
                   const std::array<double, 4> sigma{positive_scale(v[4]), positive_scale(v[5]),
                                                     positive_scale(v[6]), positive_scale(v[7])};
                   return bbox_nll(box_from_features(fixed<4>(v)), b, sigma);
                 },
                 [b](const Vec& v) { return bbox_nll_grad(fixed<4>(v), fixed<4>(v, 4), b).grad; }};
  });

  f.emplace_back("quat_norm_penalty", [](SeededRng& rng) {
    return Probe{normal_vec(rng, 4), [](const Vec& v) { return quat_norm_penalty(raw_quaternion(fixed<4>(v))); },
                 [](const Vec& v) { return quat_norm_penalty_grad(fixed<4>(v)).grad; }};
  });

  f.emplace_back("total_loss", [](SeededRng& rng) {
    constexpr int kBatch = 3;
    const DeformableModel* model = &shared_model();
    auto labels = std::make_shared<std::vector<SampleRecord>>(kBatch);
    Vec x(kBatch * head::kSize + AuxParams::kSize);
    for (int n = 0; n < kBatch; ++n) {
      SampleRecord& lab = (*labels)[n];
      lab.id = std::to_string(n);
      lab.rotation = random_unit(rng);
      HeadOutput o = normal_vec(rng, head::kSize, 0.5);
      o.segment<4>(head::kQuat) = quat_features_near(rng, *lab.rotation);
      o.segment<6>(head::kRotCov) = covariance_features(rng);
      o.segment<6>(head::kPosCov) = covariance_features(rng);
      x.segment<head::kSize>(n * head::kSize) = o;
      lab.pos_size = random_pos_size(rng);
      lab.shape = normal_vec(rng, kShapeDim);
      lab.bbox = random_box(rng);
      lab.landmarks_2d = n == 2;
      lab.landmarks = labels_away_from(rng, landmarks68(*model, o.segment<kShapeDim>(head::kShape), pose_from_head(o)));
    }
    x.tail(AuxParams::kSize) = normal_vec(rng, AuxParams::kSize, 0.5);
    TotalLossOptions opt;
    opt.model = model;
    opt.weights.beta_total = 0.5;
    opt.weights.alpha_norm = 0.3;
    auto eval = [labels, opt](const Vec& v) {
      std::vector<LossSample> batch(kBatch);
      for (int n = 0; n < kBatch; ++n) batch[n] = {v.segment<head::kSize>(n * head::kSize), &(*labels)[n]};
      return total_loss(batch, AuxParams::unflatten(v.tail(AuxParams::kSize)), opt);
    };
    return Probe{x, [eval](const Vec& v) { return eval(v).value; },
                 [eval](const Vec& v) {
                   const TotalLoss t = eval(v);
                   Vec g(v.size());
                   for (int n = 0; n < kBatch; ++n) g.segment<head::kSize>(n * head::kSize) = t.grad_outputs[n];
                   g.tail(AuxParams::kSize) = t.grad_aux.flatten();
                   return g;
                 }};
  });

  f.emplace_back("fit_objective", [](SeededRng& rng) {
    auto problem = std::make_shared<FitProblem>();
    problem->model = &shared_model();
    problem->prior_pose = {random_unit(rng), rng.normal(0.0, 0.1), rng.normal(0.0, 0.1), rng.uniform(0.3, 1.0)};
    problem->prior_pose_weight = rng.uniform(0.1, 2.0);
    const ShapeCoeffs phi = normal_vec(rng, kShapeDim, 0.5);
    const Landmarks truth = landmarks68(*problem->model, phi, problem->prior_pose);
    for (int i = 0; i < kLandmarkCount; ++i) {
      problem->landmarks2d(i, 0) = truth(i, 0) + rng.normal(0.0, 0.05);
      problem->landmarks2d(i, 1) = truth(i, 1) + rng.normal(0.0, 0.05);
      problem->confidence[i] = rng.uniform();
    }
    GaussianMixture gmm;
    gmm.weights = Eigen::Vector2d(0.3, 0.7);
    gmm.means = Eigen::MatrixXd::NullaryExpr(2, kShapeDim, [&] { return rng.normal(0.0, 0.5); });
    gmm.variances = Eigen::MatrixXd::NullaryExpr(2, kShapeDim, [&] { return rng.uniform(0.2, 2.0); });
    problem->shape_prior = gmm;
    const FitConfig cfg;
    const auto w = effective_landmark_weights(*problem, cfg);

    FitParams p;
    p.qraw = quat_features_near(rng, problem->prior_pose.q);
    p.tx = rng.normal(0.0, 0.1);
    p.ty = rng.normal(0.0, 0.1);
    p.size_raw = rng.normal(-0.5, 0.5);
    p.phi = normal_vec(rng, kShapeDim, 0.5);
    return Probe{p.flatten(),
                 [=](const Vec& v) { return evaluate_fit_objective(FitParams::unflatten(v), *problem, cfg, w).value; },
                 [=](const Vec& v) { return evaluate_fit_objective(FitParams::unflatten(v), *problem, cfg, w).grad; }};
  });

  return f;
}

const std::vector<std::pair<const char*, ProbeFactory>>& factories() {
  static const auto f = make_factories();
  return f;
}

}  // namespace

bool gradient_component_ok(double analytic, double numeric, double rel_tol, double abs_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) < rel_tol;
}

const std::vector<std::string>& gradcheck_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, _] : factories()) n.push_back(name);
    return n;
  }();
  return names;
}

std::vector<GradcheckResult> run_gradcheck(const std::vector<std::string>& names, const GradcheckOptions& options) {
  if (options.points < 1 || !(options.step > 0.0)) throw ValidationError("gradcheck: invalid options");
  for (const auto& n : names)
    if (std::find(gradcheck_names().begin(), gradcheck_names().end(), n) == gradcheck_names().end())
      throw ValidationError("gradcheck: unknown loss '" + n + "'");

  std::vector<GradcheckResult> out;
  std::uint64_t index = 0;
  for (const auto& [name, factory] : factories()) {
    ++index;
    if (!names.empty() && std::find(names.begin(), names.end(), name) == names.end()) continue;
    GradcheckResult res;
    res.name = name;
    SeededRng rng = SeededRng(options.seed).split(index);
    for (int p = 0; p < options.points; ++p) {
      Probe probe = factory(rng);
      const Vec g = probe.grad(probe.x);
      Vec x = probe.x;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + options.step;
        const double fp = probe.value(x);
        x[i] = x0 - options.step;
        const double fm = probe.value(x);
        x[i] = x0;
        const double numeric = (fp - fm) / (2.0 * options.step);
        const double diff = std::abs(g[i] - numeric);
        res.max_abs_error = std::max(res.max_abs_error, diff);
        if (diff > options.abs_floor)
          res.max_rel_error = std::max(res.max_rel_error, diff / std::max(std::abs(g[i]), std::abs(numeric)));
        if (!gradient_component_ok(g[i], numeric, options.rel_tol, options.abs_floor)) ++res.failures;
        ++res.components;
      }
      ++res.points;
    }
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace headpose
