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
#include "headpose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "headpose/augment.hpp"
#include "headpose/error.hpp"
#include "headpose/rng.hpp"
#include "json.hpp"

namespace headpose {
namespace {

const Quaternion& rotation_of(const SampleRecord& r, const char* role) {
  if (!r.rotation) throw ValidationError(std::string(role) + " '" + r.id + "' has no rotation");
  return *r.rotation;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double wrap_degrees(double a, double b) {
  double d = std::fmod(a - b, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

std::vector<SampleRecord> filter_protocol(const std::vector<SampleRecord>& records, double limit_deg) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    const EulerAngles e = to_euler(rotation_of(r, "sample"));
    const double m = std::max({std::abs(e.yaw), std::abs(e.pitch), std::abs(e.roll)});
    if (m <= limit_deg) out.push_back(r);
  }
  return out;
}

std::vector<const SampleRecord*> align_by_id(const std::vector<SampleRecord>& preds,
                                             const std::vector<SampleRecord>& gts) {
  std::unordered_map<std::string, const SampleRecord*> by_id;
  for (const auto& p : preds) by_id.emplace(p.id, &p);
  std::vector<const SampleRecord*> out;
  std::vector<std::string> missing;
  for (const auto& g : gts) {
    auto it = by_id.find(g.id);
    if (it == by_id.end())
      missing.push_back(g.id);
    else
      out.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string msg = "predictions missing for " + std::to_string(missing.size()) + " id(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw ValidationError(msg);
  }
  return out;
}

std::vector<SampleErrors> per_sample_errors(const std::vector<SampleRecord>& preds,
                                            const std::vector<SampleRecord>& gts) {
  const auto aligned = align_by_id(preds, gts);
  std::vector<SampleErrors> out;
  out.reserve(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const Quaternion& qp = rotation_of(*aligned[i], "prediction");
    const Quaternion& qg = rotation_of(gts[i], "ground truth");
    const EulerAngles ep = to_euler(qp);
    const EulerAngles eg = to_euler(qg);
    SampleErrors e;
    e.id = gts[i].id;
    e.yaw = std::abs(wrap_degrees(ep.yaw, eg.yaw));
    e.pitch = std::abs(wrap_degrees(ep.pitch, eg.pitch));
    e.roll = std::abs(wrap_degrees(ep.roll, eg.roll));
    e.geodesic = rad2deg(geodesic_error(qp, qg));
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

EulerMetrics summarize_euler(const std::vector<SampleErrors>& errs) {
  EulerMetrics m;
  m.count = errs.size();
  if (errs.empty()) return m;
  for (const auto& e : errs) {
    m.yaw += e.yaw;
    m.pitch += e.pitch;
    m.roll += e.roll;
  }
  const double n = static_cast<double>(errs.size());
  m.yaw /= n;
  m.pitch /= n;
  m.roll /= n;
  m.mae = (m.yaw + m.pitch + m.roll) / 3.0;
  return m;
}

double summarize_geodesic(const std::vector<SampleErrors>& errs) {
  if (errs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : errs) acc += e.geodesic;
  return acc / static_cast<double>(errs.size());
}

}  // namespace

EulerMetrics euler_metrics(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts) {
  return summarize_euler(per_sample_errors(preds, gts));
}

double geodesic_metric(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts) {
  return summarize_geodesic(per_sample_errors(preds, gts));
}

NmeResult nme2d(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts) {
  const auto aligned = align_by_id(preds, gts);
  NmeResult res;
  double acc = 0.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const SampleRecord& g = gts[i];
    const SampleRecord& p = *aligned[i];
    if (!g.landmarks || !g.bbox) throw ValidationError("ground truth '" + g.id + "' lacks landmarks or bbox");
    if (!p.landmarks) throw ValidationError("prediction '" + p.id + "' has no landmarks");
    const double area = g.bbox->w * g.bbox->h;
    if (!(area > 0.0)) {
      ++res.skipped;
      continue;
    }
    double dist = 0.0;
    for (int k = 0; k < kLandmarkCount; ++k)
      dist += std::hypot((*p.landmarks)(k, 0) - (*g.landmarks)(k, 0), (*p.landmarks)(k, 1) - (*g.landmarks)(k, 1));
    acc += dist / kLandmarkCount / std::sqrt(area);
    ++res.used;
  }
  if (res.used > 0) res.nme = 100.0 * acc / static_cast<double>(res.used);
  return res;
}

std::vector<NoiseSweepPoint> noise_sweep(const std::vector<NoiseTrialSet>& sets,
                                         const std::vector<SampleRecord>& gts) {
  std::vector<NoiseSweepPoint> out;
  for (const auto& set : sets) {
    if (set.trials.size() < 2) throw ValidationError("noise sweep: at least 2 trials per sigma are required");
    std::vector<std::vector<const SampleRecord*>> aligned;
    for (const auto& t : set.trials) aligned.push_back(align_by_id(t, gts));

    NoiseSweepPoint pt;
    pt.sigma = set.sigma;
    std::vector<Quaternion> qs(set.trials.size());
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (std::size_t t = 0; t < aligned.size(); ++t) qs[t] = rotation_of(*aligned[t][i], "prediction");
      const Quaternion mean = mean_quaternion(qs);
      double sq = 0.0;
      for (const auto& q : qs) {
        const double d = geodesic_error(q, mean);
        sq += d * d;
      }
      pt.spread += std::sqrt(sq / static_cast<double>(qs.size()));
      pt.error_of_mean += geodesic_error(mean, rotation_of(gts[i], "ground truth"));
    }
    if (!gts.empty()) {
      pt.spread = rad2deg(pt.spread / static_cast<double>(gts.size()));
      pt.error_of_mean = rad2deg(pt.error_of_mean / static_cast<double>(gts.size()));
    }
    out.push_back(pt);
  }
  return out;
}

std::vector<std::vector<NamedImage>> noise_inject(const std::vector<NamedImage>& images, double sigma,
                                                  int trials, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  if (trials < 1) throw ValidationError("at least one noise trial is required");
  const SeededRng root(seed);
  std::vector<std::vector<NamedImage>> out(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    const SeededRng trial_rng = root.split(static_cast<std::uint64_t>(t));
    for (const auto& img : images) {
      SeededRng rng = trial_rng.split(hash_string(img.id));
      out[static_cast<std::size_t>(t)].push_back({img.id, gaussian_noise(img.image, rng, sigma)});
    }
  }
  return out;
}

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("correlation: length mismatch");
  if (x.size() < 2) throw ValidationError("correlation: at least 2 points are required");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y) || !(sxx > 0.0) || !(syy > 0.0)) return {0.0, false};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), true};
}

Correlation spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

UncertaintyCorrelation uncertainty_correlation(const std::vector<SampleRecord>& preds,
                                               const std::vector<SampleRecord>& gts) {
  const auto aligned = align_by_id(preds, gts);
  if (gts.size() < 3) throw ValidationError("uncertainty correlation: at least 3 samples are required");
  UncertaintyCorrelation out;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const SampleRecord& p = *aligned[i];
    if (!p.rot_cov_features) throw ValidationError("prediction '" + p.id + "' has no rotation covariance");
    const double x = covariance_from_features(*p.rot_cov_features).matrix.norm();
    const double y = rad2deg(geodesic_error(rotation_of(p, "prediction"), rotation_of(gts[i], "ground truth")));
    out.points.emplace_back(x, y);
    xs.push_back(x);
    ys.push_back(y);
  }
  out.pearson = pearson(xs, ys);
  out.spearman = spearman(xs, ys);
  return out;
}

MetricsReport make_report(const std::vector<SampleRecord>& preds, const std::vector<SampleRecord>& gts) {
  MetricsReport r;
  r.samples = per_sample_errors(preds, gts);
  r.euler = summarize_euler(r.samples);
  r.geodesic = summarize_geodesic(r.samples);
  return r;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  j["config"] = cfg;
  j["count"] = report.euler.count;
  j["yaw"] = report.euler.yaw;
  j["pitch"] = report.euler.pitch;
  j["roll"] = report.euler.roll;
  j["mae"] = report.euler.mae;
  j["geodesic"] = report.geodesic;
  if (report.nme) j["nme2d"] = {{"percent", report.nme->nme}, {"used", report.nme->used}, {"skipped", report.nme->skipped}};
  if (!report.sweep.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : report.sweep)
      arr.push_back({{"sigma", p.sigma}, {"spread", p.spread}, {"error_of_mean", p.error_of_mean}});
    j["noise_sweep"] = arr;
  }
  if (report.correlation) {
    const auto& c = *report.correlation;
    auto pts = nlohmann::ordered_json::array();
    for (const auto& [x, y] : c.points) pts.push_back({x, y});
    j["correlation"] = {{"pearson", c.pearson.value},       {"pearson_defined", c.pearson.defined},
                        {"spearman", c.spearman.value},     {"spearman_defined", c.spearman.defined},
                        {"points", pts}};
  }
  return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricsReport& report) {
  std::string out = "id,yaw,pitch,roll,geodesic\n";
  for (const auto& e : report.samples)
    out += e.id + "," + fmt(e.yaw) + "," + fmt(e.pitch) + "," + fmt(e.roll) + "," + fmt(e.geodesic) + "\n";
  return out;
}

std::string sweep_to_csv(const std::vector<NoiseSweepPoint>& sweep) {
  std::string out = "sigma,spread,error_of_mean\n";
  for (const auto& p : sweep) out += fmt(p.sigma) + "," + fmt(p.spread) + "," + fmt(p.error_of_mean) + "\n";
  return out;
}

}  // namespace headpose
