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

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cli.hpp"
#include "headpose/data.hpp"
#include "headpose/geometry.hpp"
#include "headpose/image.hpp"

namespace testing {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

inline CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = headpose::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Relative path -> bytes for every regular file under `dir`.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).generic_string()] = slurp(e.path());
  return files;
}

/// Inputs shared by the command runs: two textured images with labels, and
/// a mix specification.
inline void write_cli_inputs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  for (int k = 0; k < 2; ++k) {
    headpose::GrayImage img(160, 120);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * (3 + k) + y * 5) % 251);
    headpose::write_pgm(dir / "images" / ("img" + std::to_string(k) + ".pgm"), img);
  }
  std::vector<headpose::SampleRecord> recs(2);
  for (int k = 0; k < 2; ++k) {
    recs[k].id = "img" + std::to_string(k);
    recs[k].rotation = headpose::from_euler({10.0 * k, -5.0, 3.0});
    recs[k].pos_size = headpose::PosSize{0.1 * k, 0.0, 0.3};
    recs[k].bbox = headpose::Box{0.1 * k, 0.0, 0.4, 0.5};
  }
  headpose::write_samples(dir / "samples.jsonl", recs);
  headpose::write_file_atomic(dir / "mix.json",
                              R"({"datasets":[{"name":"a","size":100},{"name":"b","size":7}],"probs":[0.7,0.3],"seed":4})");
}

/// Runs every subcommand once, writing under `dir / "out"`. Returns the
/// exit code and stdout of each run, keyed by command.
inline std::vector<std::pair<std::string, CliRun>> run_all_commands(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path o = dir / "out";
  fs::create_directories(o);
  const auto p = [&](const fs::path& x) { return x.string(); };
  std::vector<std::pair<std::string, CliRun>> runs;
  runs.emplace_back("make-model", cli({"make-model", "--seed", "3", "--out", p(o / "model.dfm")}));
  runs.emplace_back("synth-fit", cli({"synth-fit", "--model", p(o / "model.dfm"), "--n", "8", "--seed", "2",
                                      "--noise", "0.002", "--out-dir", p(o / "synth")}));
  runs.emplace_back("fit", cli({"fit", "--landmarks", p(o / "synth/landmarks.jsonl"), "--prior",
                                p(o / "synth/prior.jsonl"), "--model", p(o / "model.dfm"), "--gmm",
                                p(o / "synth/gmm.json"), "--out", p(o / "fit.jsonl")}));
  runs.emplace_back("evaluate", cli({"evaluate", "--pred", p(o / "fit.jsonl"), "--gt", p(o / "synth/truth.jsonl"),
                                     "--filter99", "--out", p(o / "report.json"), "--csv", p(o / "report.csv")}));
  runs.emplace_back("gmm", cli({"gmm", "--samples", p(o / "synth/truth.jsonl"), "--k", "2", "--seed", "1", "--out",
                                p(o / "gmm.json")}));
  runs.emplace_back("noise", cli({"noise", "--images", p(dir / "images"), "--sigmas", "0,4", "--trials", "2",
                                  "--seed", "9", "--out", p(o / "noise")}));

  // Predictions on the noisy copies: the ground truth itself, and the
  // ground truth rotated by a sigma-dependent angle in opposite directions.
  const auto truth = headpose::read_samples(o / "synth/truth.jsonl");
  std::string manifest = R"({"sets":[)";
  for (int s = 0; s < 2; ++s) {
    manifest += (s ? "," : "") + std::string(R"({"sigma":)") + std::to_string(4 * s) + R"(,"trials":[)";
    for (int t = 0; t < 2; ++t) {
      auto pred = truth;
      const double angle = headpose::deg2rad(s * (t ? -1.0 : 1.0));
      for (auto& r : pred) r.rotation = headpose::quat_mul(*r.rotation, headpose::exp_map({0.0, angle, 0.0}));
      const std::string name = "pred_" + std::to_string(s) + "_" + std::to_string(t) + ".jsonl";
      headpose::write_samples(o / name, pred);
      manifest += (t ? ",\"" : "\"") + name + "\"";
    }
    manifest += "]}";
  }
  headpose::write_file_atomic(o / "manifest.json", manifest + "]}");
  runs.emplace_back("sweep", cli({"sweep", "--manifest", p(o / "manifest.json"), "--gt", p(o / "synth/truth.jsonl"),
                                  "--out", p(o / "sweep.json"), "--csv", p(o / "sweep.csv")}));
  runs.emplace_back("augment", cli({"augment", "--samples", p(dir / "samples.jsonl"), "--images", p(dir / "images"),
                                    "--seed", "5", "--n", "2", "--size", "64", "--out", p(o / "aug")}));
  runs.emplace_back("mix", cli({"mix", "--config", p(dir / "mix.json"), "--n", "500", "--out", p(o / "mix.csv")}));
  runs.emplace_back("train-demo", cli({"train-demo", "--seed", "4", "--samples", "4000", "--task-size", "256",
                                       "--heldout", "64", "--out", p(o / "train")}));
  runs.emplace_back("gradcheck", cli({"gradcheck", "--points", "5", "--seed", "2", "--out", p(o / "gradcheck.json")}));
  return runs;
}

}  // namespace testing
