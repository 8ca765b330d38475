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
#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "headpose/augment.hpp"
#include "headpose/data.hpp"
#include "headpose/error.hpp"
#include "headpose/eval.hpp"
#include "headpose/facemodel.hpp"
#include "headpose/fitting.hpp"
#include "headpose/gradcheck.hpp"
#include "headpose/image.hpp"
#include "headpose/rng.hpp"
#include "headpose/trainer.hpp"

namespace headpose::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const ojson& j) { write_file_atomic(path, j.dump(2) + "\n"); }

/// *.pgm files of a directory sorted by name; the id is the file stem.
std::vector<NamedImage> read_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<NamedImage> out;
  for (const auto& f : files) out.push_back({f.stem().string(), read_pgm(f)});
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ojson sweep_json(const std::vector<NoiseSweepPoint>& sweep) {
  ojson arr = ojson::array();
  for (const auto& p : sweep)
    arr.push_back({{"sigma", p.sigma}, {"spread", p.spread}, {"error_of_mean", p.error_of_mean}});
  return arr;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string pred, gt, out, csv;
  bool nme = false, filter99 = false, correlation = false;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto preds = read_samples(a.pred);
  auto gts = read_samples(a.gt);
  const std::size_t before = gts.size();
  if (a.filter99) gts = filter_protocol(gts);
  if (gts.empty()) throw ValidationError("no ground-truth samples to evaluate");

  MetricsReport report = make_report(preds, gts);
  if (a.nme) report.nme = nme2d(preds, gts);
  if (a.correlation) report.correlation = uncertainty_correlation(preds, gts);
  report.config = {{"pred", a.pred},
                   {"gt", a.gt},
                   {"filter99", a.filter99 ? "true" : "false"},
                   {"removed_by_filter", std::to_string(before - gts.size())},
                   {"nme", a.nme ? "true" : "false"},
                   {"correlation", a.correlation ? "true" : "false"}};

  const std::string json = report_to_json(report);
  if (a.out.empty())
    out << json;
  else
    write_file_atomic(a.out, json);
  if (!a.csv.empty()) write_file_atomic(a.csv, report_to_csv(report));
  if (!a.out.empty())
    out << "samples " << report.euler.count << "  MAE " << fmt_g(report.euler.mae) << "  geodesic "
        << fmt_g(report.geodesic) << "\n";
  return kExitOk;
}

struct NoiseArgs {
  std::string images, out;
  std::vector<double> sigmas = kDefaultSweepSigmas;
  int trials = kDefaultSweepTrials;
  std::uint64_t seed = 0;
};

int cmd_noise(const NoiseArgs& a, std::ostream& out) {
  if (a.trials < 1) throw ValidationError("--trials must be positive");
  const auto images = read_image_dir(a.images);
  if (images.empty()) throw ValidationError("no .pgm files in " + a.images);
  const fs::path root(a.out);
  ensure_dir(root);

  ojson manifest;
  manifest["version"] = kVersion;
  manifest["seed"] = a.seed;
  manifest["trials"] = a.trials;
  ojson ids = ojson::array();
  for (const auto& img : images) ids.push_back(img.id);
  manifest["images"] = ids;
  ojson sets = ojson::array();
  for (double sigma : a.sigmas) {
    if (!(sigma >= 0.0)) throw ValidationError("noise levels must be non-negative");
    const auto noisy = noise_inject(images, sigma, a.trials, a.seed);
    ojson dirs = ojson::array();
    for (int t = 0; t < a.trials; ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "trial_%02d", t);
      const fs::path rel = fs::path("sigma_" + fmt_g(sigma)) / name;
      ensure_dir(root / rel);
      for (const auto& img : noisy[t]) write_pgm(root / rel / (img.id + ".pgm"), img.image);
      dirs.push_back(rel.generic_string());
    }
    sets.push_back({{"sigma", sigma}, {"trials", dirs}});
  }
  manifest["sets"] = sets;
  write_json(root / "noise.json", manifest);
  out << "wrote " << a.sigmas.size() << " noise levels x " << a.trials << " trials x " << images.size()
      << " images to " << a.out << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string manifest, gt, out, csv;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const fs::path manifest_path(a.manifest);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(a.manifest + ": " + e.what());
  }
  const auto gts = read_samples(a.gt);
  std::vector<NoiseTrialSet> sets;
  try {
    for (const auto& s : m.at("sets")) {
      NoiseTrialSet set;
      set.sigma = s.at("sigma").get<double>();
      for (const auto& t : s.at("trials"))
        set.trials.push_back(read_samples(manifest_path.parent_path() / t.get<std::string>()));
      sets.push_back(std::move(set));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(a.manifest + ": " + e.what());
  }
  const auto sweep = noise_sweep(sets, gts);

  ojson j;
  j["version"] = kVersion;
  j["config"] = {{"manifest", a.manifest}, {"gt", a.gt}};
  j["noise_sweep"] = sweep_json(sweep);
  if (a.out.empty())
    out << j.dump(2) << "\n";
  else
    write_json(a.out, j);
  if (!a.csv.empty()) write_file_atomic(a.csv, sweep_to_csv(sweep));
  if (!a.out.empty())
    for (const auto& p : sweep) out << "sigma " << fmt_g(p.sigma) << "  spread " << fmt_g(p.spread) << "\n";
  return kExitOk;
}

struct AugmentArgs {
  std::string samples, images, out;
  std::uint64_t seed = 0;
  int n = 1;
  int size = 129;
};

int cmd_augment(const AugmentArgs& a, std::ostream& out) {
  if (a.n < 1) throw ValidationError("--n must be positive");
  AugmentConfig cfg;
  cfg.output_size = a.size;
  cfg.validate();
  const auto samples = read_samples(a.samples);
  const fs::path root(a.out);
  ensure_dir(root);
  const SeededRng base(a.seed);
  std::vector<SampleRecord> labels;
  for (const auto& s : samples) {
    if (!s.bbox) throw ValidationError("sample '" + s.id + "' has no bbox");
    const GrayImage image = read_pgm(fs::path(a.images) / (s.id + ".pgm"));
    const SeededRng per_sample = base.split(hash_string(s.id));
    for (int k = 0; k < a.n; ++k) {
      SeededRng rng = per_sample.split(static_cast<std::uint64_t>(k));
      AugmentedSample aug = augment_sample(image, s, rng, cfg);
      aug.labels.id = s.id + "_" + std::to_string(k);
      write_pgm(root / (aug.labels.id + ".pgm"), aug.crop);
      labels.push_back(std::move(aug.labels));
    }
  }
  write_samples(root / "labels.jsonl", labels);
  out << "wrote " << labels.size() << " augmented samples to " << a.out << "\n";
  return kExitOk;
}

struct FitArgs {
  std::string landmarks, prior, model, gmm, out;
  double prior_weight = 1.0;
  bool no_visibility = false;
};

struct LandmarkInput {
  std::string id;
  Landmarks2d points = Landmarks2d::Zero();
  std::array<double, kLandmarkCount> confidence{};
};

std::vector<LandmarkInput> read_landmark_inputs(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<LandmarkInput> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const SampleRecord r = record_from_json(line, number);
    if (!r.landmarks) throw ValidationError(path + ": line " + std::to_string(number) + ": no landmarks");
    LandmarkInput in;
    in.id = r.id;
    in.points = r.landmarks->leftCols<2>();
    in.confidence.fill(1.0);
    const auto j = nlohmann::json::parse(line);
    if (j.contains("confidence")) {
      const auto& c = j.at("confidence");
      if (!c.is_array() || c.size() != kLandmarkCount)
        throw ValidationError(path + ": line " + std::to_string(number) + ": field 'confidence': expected " +
                              std::to_string(kLandmarkCount) + " numbers");
      for (int i = 0; i < kLandmarkCount; ++i) {
        if (!c[i].is_number()) throw ValidationError(path + ": line " + std::to_string(number) +
                                                     ": field 'confidence': expected numbers");
        in.confidence[i] = c[i].get<double>();
      }
    }
    out.push_back(std::move(in));
  }
  return out;
}

ojson fit_result_json(const std::string& id, const FitResult& r) {
  ojson j;
  j["id"] = id;
  const Quaternion q = r.pose.q;
  j["quat"] = {q.x, q.y, q.z, q.w};
  j["pos"] = {r.pose.tx, r.pose.ty};
  j["size"] = r.pose.s;
  j["shape"] = std::vector<double>(r.coeffs.data(), r.coeffs.data() + kShapeDim);
  j["converged"] = r.converged;
  j["failed"] = r.failed;
  j["iterations"] = r.iterations;
  j["objective"] = r.final_objective;
  j["gradient_norm"] = r.gradient_norm;
  j["landmark_rmse"] = r.landmark_rmse;
  return j;
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const DeformableModel model = load_model(a.model);
  const GaussianMixture gmm = a.gmm.empty()
                                  ? GaussianMixture::single(Eigen::VectorXd::Zero(kShapeDim),
                                                            Eigen::VectorXd::Ones(kShapeDim))
                                  : gmm_from_json(read_text_file(a.gmm));
  if (gmm.dim() != kShapeDim) throw ValidationError("shape prior has the wrong dimension");
  const auto inputs = read_landmark_inputs(a.landmarks);
  std::map<std::string, Pose> priors;
  for (const auto& r : read_samples(a.prior)) {
    if (!r.rotation || !r.pos_size) throw ValidationError("prior '" + r.id + "' needs quat, pos and size");
    priors[r.id] = Pose{*r.rotation, r.pos_size->x, r.pos_size->y, r.pos_size->s};
  }

  FitConfig config;
  config.use_visibility = !a.no_visibility;
  std::string lines;
  int converged = 0, failed = 0;
  for (const auto& in : inputs) {
    const auto it = priors.find(in.id);
    if (it == priors.end()) throw ValidationError("no prior pose for '" + in.id + "'");
    FitProblem problem;
    problem.landmarks2d = in.points;
    problem.confidence = in.confidence;
    problem.prior_pose = it->second;
    problem.prior_pose_weight = a.prior_weight;
    problem.shape_prior = gmm;
    problem.model = &model;
    const FitResult r = fit(problem, it->second, ShapeCoeffs::Zero(), config);
    converged += r.converged;
    failed += r.failed;
    lines += fit_result_json(in.id, r).dump() + "\n";
  }
  write_file_atomic(a.out, lines);
  out << "fitted " << inputs.size() << " samples: " << converged << " converged, " << failed << " failed\n";
  return kExitOk;
}

struct SynthFitArgs {
  std::string model, out_dir;
  int n = 100;
  std::uint64_t seed = 0;
  double perturb_deg = 10.0;
  double max_angle = 20.0;
  double noise = 0.0;
  double prior_variance = 0.25;
  bool mask_half = false;
};

int cmd_synth_fit(const SynthFitArgs& a, std::ostream& out) {
  if (a.n < 1) throw ValidationError("--n must be positive");
  if (!(a.prior_variance > 0.0)) throw ValidationError("--prior-variance must be positive");
  const DeformableModel model = load_model(a.model);
  const GaussianMixture prior = GaussianMixture::single(Eigen::VectorXd::Zero(kShapeDim),
                                                        Eigen::VectorXd::Constant(kShapeDim, a.prior_variance));
  const fs::path root(a.out_dir);
  ensure_dir(root);
  const SeededRng base(a.seed);
  std::string landmarks, priors, truths;
  for (int i = 0; i < a.n; ++i) {
    SeededRng rng = base.split(static_cast<std::uint64_t>(i));
    const SyntheticFitCase c = make_synthetic_fit_case(model, prior, rng, a.perturb_deg, a.max_angle, a.noise);
    char id[32];
    std::snprintf(id, sizeof id, "fit_%04d", i);

    SampleRecord lm;
    lm.id = id;
    Landmarks pts = Landmarks::Zero();
    pts.leftCols<2>() = c.problem.landmarks2d;
    lm.landmarks = pts;
    lm.landmarks_2d = true;
    auto j = nlohmann::json::parse(record_to_json(lm));
    std::vector<double> conf(c.problem.confidence.begin(), c.problem.confidence.end());
    if (a.mask_half)
      for (int k = 0; k < kLandmarkCount; k += 2) conf[k] = 0.0;
    j["confidence"] = conf;
    landmarks += j.dump() + "\n";

    SampleRecord p;
    p.id = id;
    p.rotation = c.problem.prior_pose.q;
    p.pos_size = PosSize{c.problem.prior_pose.tx, c.problem.prior_pose.ty, c.problem.prior_pose.s};
    priors += record_to_json(p) + "\n";

    SampleRecord t;
    t.id = id;
    t.rotation = c.truth.q;
    t.pos_size = PosSize{c.truth.tx, c.truth.ty, c.truth.s};
    t.shape = c.truth_coeffs;
    truths += record_to_json(t) + "\n";
  }
  write_file_atomic(root / "landmarks.jsonl", landmarks);
  write_file_atomic(root / "prior.jsonl", priors);
  write_file_atomic(root / "truth.jsonl", truths);
  write_file_atomic(root / "gmm.json", gmm_to_json(prior) + "\n");
  out << "wrote " << a.n << " fitting problems to " << a.out_dir << "\n";
  return kExitOk;
}

struct MixArgs {
  std::string config, out;
  std::uint64_t n = 1000;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_mix(const MixArgs& a, std::ostream& out) {
  const fs::path path(a.config);
  MixSpec spec = parse_mix_spec(read_text_file(path), path.parent_path());
  const std::uint64_t seed = a.seed_given ? a.seed : spec.seed;
  MixSampler sampler(spec.mix, seed);
  std::string csv = "dataset,index\n";
  std::vector<std::uint64_t> counts(spec.mix.entries.size(), 0);
  for (std::uint64_t i = 0; i < a.n; ++i) {
    const auto [d, idx] = sampler.next();
    ++counts[d];
    csv += spec.mix.entries[d].name + "," + std::to_string(idx) + "\n";
  }
  write_file_atomic(a.out, csv);
  if (spec.mix.renormalized) out << "note: mixing probabilities were renormalized to sum to 1\n";
  for (std::size_t d = 0; d < counts.size(); ++d)
    out << spec.mix.entries[d].name << " p=" << fmt_g(spec.mix.probs[d]) << " drawn=" << counts[d] << "\n";
  return kExitOk;
}

struct TrainDemoArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  std::uint64_t samples = 200000;
  int task_size = 4096;
  int heldout = 1000;
  bool clean = false, no_nll = false, momentum = false;
};

/// Values from --config, overridden by flags given on the command line.
void apply_train_config(TrainDemoArgs& a, const CLI::App& app) {
  if (a.config.empty()) return;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(a.config));
    if (!j.is_object()) throw ValidationError(a.config + ": expected a JSON object");
    if (j.contains("seed") && app.count("--seed") == 0) a.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("samples") && app.count("--samples") == 0) a.samples = j.at("samples").get<std::uint64_t>();
    if (j.contains("task_size") && app.count("--task-size") == 0) a.task_size = j.at("task_size").get<int>();
    if (j.contains("heldout") && app.count("--heldout") == 0) a.heldout = j.at("heldout").get<int>();
    if (j.contains("noise") && app.count("--clean") == 0) a.clean = !j.at("noise").get<bool>();
    if (j.contains("nll") && app.count("--no-nll") == 0) a.no_nll = !j.at("nll").get<bool>();
    if (j.contains("optimizer") && app.count("--momentum") == 0) {
      const auto name = j.at("optimizer").get<std::string>();
      if (name != "adam" && name != "momentum") throw ValidationError(a.config + ": unknown optimizer '" + name + "'");
      a.momentum = name == "momentum";
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(a.config + ": " + e.what());
  }
}

int cmd_train_demo(const TrainDemoArgs& a, std::ostream& out) {
  if (a.heldout < 3) throw ValidationError("--heldout must be at least 3");
  TaskConfig tc;
  tc.seed = a.seed;
  tc.n = a.task_size;
  tc.noise = !a.clean;
  const SyntheticTask task = make_synthetic_task(tc);

  TrainConfig cfg;
  cfg.seed = a.seed;
  cfg.total_samples = a.samples;
  cfg.nll = !a.no_nll;
  cfg.optimizer = a.momentum ? Optimizer::kMomentum : Optimizer::kAdam;
  cfg.validate();

  const LinearHead init = LinearHead::initial(tc.input_dim);
  const TotalLossOptions options = loss_options(task, cfg);
  const double initial = evaluate_loss(init, task, options);
  const TrainResult result = train(init, task, cfg);
  const double final_loss = evaluate_loss(result.head, task, options);
  const double last_loss = evaluate_loss(result.last, task, options);

  const fs::path root(a.out);
  ensure_dir(root);
  write_file_atomic(root / "head.json", head_to_json(result.head));
  write_file_atomic(root / "trace.csv", trace_to_csv(result.trace));

  ojson s;
  s["version"] = kVersion;
  s["config"] = {{"seed", a.seed},
                 {"samples", a.samples},
                 {"task_size", a.task_size},
                 {"heldout", a.heldout},
                 {"noise", !a.clean},
                 {"nll", !a.no_nll},
                 {"optimizer", a.momentum ? "momentum" : "adam"},
                 {"batch_size", cfg.batch_size},
                 {"peak_lr", cfg.peak_lr}};
  s["initial_loss"] = initial;
  s["final_loss"] = final_loss;
  s["last_iterate_loss"] = last_loss;
  s["ratio"] = final_loss / initial;
  s["averaged_iterates"] = result.averaged_iterates;
  if (!a.clean) {
    TaskConfig held = tc;
    held.split = 1;
    held.n = a.heldout;
    const SyntheticTask heldout = make_synthetic_task(held);
    std::vector<double> predicted, planted;
    for (int i = 0; i < heldout.config.n; ++i) {
      predicted.push_back(predicted_rotation_uncertainty(result.head, heldout.inputs[i]));
      planted.push_back(heldout.jitter_sd[i]);
    }
    const Correlation rho = spearman(predicted, planted);
    const Correlation r = pearson(predicted, planted);
    s["heldout"] = {{"samples", a.heldout}, {"spearman", rho.value}, {"pearson", r.value}};
  }
  write_json(root / "summary.json", s);

  out << "loss " << fmt_g(initial) << " -> " << fmt_g(final_loss) << " (ratio " << fmt_g(final_loss / initial)
      << ")\n";
  if (s.contains("heldout"))
    out << "held-out spearman(predicted uncertainty, planted jitter) = "
        << fmt_g(s["heldout"]["spearman"].get<double>()) << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::string losses = "all", out;
  int points = 100;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (a.points < 1) throw ValidationError("--points must be positive");
  std::vector<std::string> names;
  if (a.losses != "all") {
    names = split_list(a.losses);
    const auto& known = gradcheck_names();
    for (const auto& n : names)
      if (std::find(known.begin(), known.end(), n) == known.end())
        throw ValidationError("unknown loss '" + n + "'");
  }
  GradcheckOptions opt;
  opt.points = a.points;
  opt.seed = a.seed;
  const auto results = run_gradcheck(names, opt);

  bool all = true;
  double worst = 0.0;
  ojson arr = ojson::array();
  char line[256];
  for (const auto& r : results) {
    all = all && r.passed();
    worst = std::max(worst, r.max_rel_error);
    std::snprintf(line, sizeof line, "%-18s points %3d components %6ld failures %ld max_rel %.3e max_abs %.3e\n",
                  r.name.c_str(), r.points, r.components, r.failures, r.max_rel_error, r.max_abs_error);
    out << line;
    arr.push_back({{"name", r.name},
                   {"points", r.points},
                   {"components", r.components},
                   {"failures", r.failures},
                   {"max_rel_error", r.max_rel_error},
                   {"max_abs_error", r.max_abs_error},
                   {"passed", r.passed()}});
  }
  std::snprintf(line, sizeof line, "max relative error %.3e: %s\n", worst, all ? "ok" : "FAILED");
  out << line;
  if (!a.out.empty()) {
    ojson j;
    j["version"] = kVersion;
    j["config"] = {{"points", a.points}, {"seed", a.seed}, {"rel_tol", opt.rel_tol}, {"abs_floor", opt.abs_floor},
                   {"step", opt.step}};
    j["losses"] = arr;
    j["passed"] = all;
    write_json(a.out, j);
  }
  return all ? kExitOk : kExitRuntime;
}

struct MakeModelArgs {
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_make_model(const MakeModelArgs& a, std::ostream& out) {
  const DeformableModel model = synthetic_model(a.seed);
  save_model(a.out, model);
  out << "wrote model with " << model.vertex_count() << " vertices to " << a.out << "\n";
  return kExitOk;
}

struct GmmArgs {
  std::string samples, out;
  int k = 4;
  std::uint64_t seed = 0;
};

int cmd_gmm(const GmmArgs& a, std::ostream& out) {
  if (a.k < 1) throw ValidationError("--k must be positive");
  const auto records = read_samples(a.samples);
  std::vector<const ShapeCoeffs*> shapes;
  for (const auto& r : records)
    if (r.shape) shapes.push_back(&*r.shape);
  if (shapes.size() < static_cast<std::size_t>(a.k))
    throw ValidationError("need at least " + std::to_string(a.k) + " samples with shape coefficients");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(shapes.size()), kShapeDim);
  for (std::size_t i = 0; i < shapes.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = shapes[i]->transpose();
  const GmmFitResult r = gmm_fit(x, a.k, a.seed);
  write_file_atomic(a.out, gmm_to_json(r.mixture) + "\n");
  out << "fitted " << a.k << " components to " << shapes.size() << " samples, log-likelihood "
      << fmt_full(r.log_likelihood.back()) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Head-pose geometry, loss and evaluation toolkit", "headpose"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::map<const CLI::App*, std::function<int()>> actions;

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Pose metrics of predictions against ground truth");
  evaluate->add_option("--pred", ev.pred, "Predictions (JSONL)")->required();
  evaluate->add_option("--gt", ev.gt, "Ground truth (JSONL)")->required();
  evaluate->add_flag("--nme", ev.nme, "Also report 2D landmark NME");
  evaluate->add_flag("--filter99", ev.filter99, "Drop ground truth with any Euler angle beyond 99 degrees");
  evaluate->add_flag("--correlation", ev.correlation, "Correlate predicted rotation uncertainty with error");
  evaluate->add_option("--out", ev.out, "Report JSON (default: stdout)");
  evaluate->add_option("--csv", ev.csv, "Per-sample error CSV");
  actions[evaluate] = [&] { return cmd_evaluate(ev, out); };

  NoiseArgs no;
  auto* noise = app.add_subcommand("noise", "Write noisy copies of a directory of PGM images");
  noise->add_option("--images", no.images, "Directory of .pgm images")->required();
  noise->add_option("--sigmas", no.sigmas, "Noise standard deviations in intensity units")->delimiter(',');
  noise->add_option("--trials", no.trials, "Noisy copies per level")->capture_default_str();
  noise->add_option("--seed", no.seed, "Random seed")->capture_default_str();
  noise->add_option("--out", no.out, "Output directory")->required();
  actions[noise] = [&] { return cmd_noise(no, out); };

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Noise-resistance spread from predictions on noisy copies");
  sweep->add_option("--manifest", sw.manifest, "JSON listing prediction files per noise level")->required();
  sweep->add_option("--gt", sw.gt, "Ground truth (JSONL)")->required();
  sweep->add_option("--out", sw.out, "Report JSON (default: stdout)");
  sweep->add_option("--csv", sw.csv, "Sweep CSV");
  actions[sweep] = [&] { return cmd_sweep(sw, out); };

  AugmentArgs au;
  auto* augment = app.add_subcommand("augment", "Randomized crops with transformed labels");
  augment->add_option("--samples", au.samples, "Labels in normalized image coordinates (JSONL)")->required();
  augment->add_option("--images", au.images, "Directory holding <id>.pgm")->required();
  augment->add_option("--seed", au.seed, "Random seed")->capture_default_str();
  augment->add_option("--n", au.n, "Crops per sample")->capture_default_str();
  augment->add_option("--size", au.size, "Crop side in pixels")->capture_default_str();
  augment->add_option("--out", au.out, "Output directory")->required();
  actions[augment] = [&] { return cmd_augment(au, out); };

  FitArgs fi;
  auto* fitcmd = app.add_subcommand("fit", "Fit the deformable model to 2D landmarks");
  fitcmd->add_option("--landmarks", fi.landmarks, "2D landmarks with optional confidence (JSONL)")->required();
  fitcmd->add_option("--prior", fi.prior, "Prior poses (JSONL)")->required();
  fitcmd->add_option("--model", fi.model, "Deformable model file")->required();
  fitcmd->add_option("--gmm", fi.gmm, "Shape prior mixture (JSON, default standard normal)");
  fitcmd->add_option("--prior-weight", fi.prior_weight, "Weight of the rotation prior")->capture_default_str();
  fitcmd->add_flag("--no-visibility", fi.no_visibility, "Do not down-weight landmarks facing away");
  fitcmd->add_option("--out", fi.out, "Fit results (JSONL)")->required();
  actions[fitcmd] = [&] { return cmd_fit(fi, out); };

  SynthFitArgs sf;
  auto* synth = app.add_subcommand("synth-fit", "Generate fitting problems with known solutions");
  synth->add_option("--model", sf.model, "Deformable model file")->required();
  synth->add_option("--n", sf.n, "Number of problems")->capture_default_str();
  synth->add_option("--seed", sf.seed, "Random seed")->capture_default_str();
  synth->add_option("--perturb-deg", sf.perturb_deg, "Rotation error of the prior pose")->capture_default_str();
  synth->add_option("--max-angle", sf.max_angle, "Largest |yaw|, |pitch|, |roll| of the truth")->capture_default_str();
  synth->add_option("--noise", sf.noise, "Landmark noise sd")->capture_default_str();
  synth->add_option("--prior-variance", sf.prior_variance, "Variance of the shape prior")->capture_default_str();
  synth->add_flag("--mask-half", sf.mask_half, "Zero the confidence of every other landmark");
  synth->add_option("--out-dir", sf.out_dir, "Output directory")->required();
  actions[synth] = [&] { return cmd_synth_fit(sf, out); };

  MixArgs mx;
  auto* mix = app.add_subcommand("mix", "Draw a dataset-mixing sample stream");
  mix->add_option("--config", mx.config, "Mix specification (JSON)")->required();
  mix->add_option("--n", mx.n, "Number of draws")->capture_default_str();
  auto* mix_seed = mix->add_option("--seed", mx.seed, "Overrides the seed of the specification");
  mix->add_option("--out", mx.out, "Stream CSV")->required();
  actions[mix] = [&] {
    mx.seed_given = mix_seed->count() > 0;
    return cmd_mix(mx, out);
  };

  TrainDemoArgs td;
  auto* train_demo = app.add_subcommand("train-demo", "Train the linear head on a synthetic task");
  train_demo->add_option("--config", td.config, "JSON with seed, samples, task_size, heldout, noise, nll, optimizer");
  train_demo->add_option("--seed", td.seed, "Random seed")->capture_default_str();
  train_demo->add_option("--samples", td.samples, "Training samples seen")->capture_default_str();
  train_demo->add_option("--task-size", td.task_size, "Synthetic training set size")->capture_default_str();
  train_demo->add_option("--heldout", td.heldout, "Held-out set size")->capture_default_str();
  train_demo->add_flag("--clean", td.clean, "Noise-free labels");
  train_demo->add_flag("--no-nll", td.no_nll, "Drop the likelihood terms");
  train_demo->add_flag("--momentum", td.momentum, "SGD with momentum instead of Adam");
  train_demo->add_option("--out", td.out, "Output directory")->required();
  actions[train_demo] = [&] {
    apply_train_config(td, *train_demo);
    return cmd_train_demo(td, out);
  };

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  gradcheck->add_option("--losses", gc.losses, "'all' or a comma-separated list")->capture_default_str();
  gradcheck->add_option("--points", gc.points, "Random points per loss")->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  gradcheck->add_option("--out", gc.out, "Report JSON");
  actions[gradcheck] = [&] { return cmd_gradcheck(gc, out); };

  MakeModelArgs mm;
  auto* make_model = app.add_subcommand("make-model", "Write the procedural deformable model");
  make_model->add_option("--seed", mm.seed, "Random seed")->capture_default_str();
  make_model->add_option("--out", mm.out, "Model file")->required();
  actions[make_model] = [&] { return cmd_make_model(mm, out); };

  GmmArgs gm;
  auto* gmm = app.add_subcommand("gmm", "Fit a Gaussian mixture to shape coefficients");
  gmm->add_option("--samples", gm.samples, "Records with shape coefficients (JSONL)")->required();
  gmm->add_option("--k", gm.k, "Components")->capture_default_str();
  gmm->add_option("--seed", gm.seed, "Random seed")->capture_default_str();
  gmm->add_option("--out", gm.out, "Mixture JSON")->required();
  actions[gmm] = [&] { return cmd_gmm(gm, out); };

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (const auto* sub : app.get_subcommands()) return actions.at(sub)();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RuntimeFailure& e) {
    err << "failure: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace headpose::cli
