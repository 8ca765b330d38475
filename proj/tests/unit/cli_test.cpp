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
#include <filesystem>

#include <doctest.h>
#include <json.hpp>

#include "cli_scenario.hpp"
#include "headpose/data.hpp"
#include "headpose/error.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using testing::cli;

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  CHECK(cli({"--version"}).code == 0);
  CHECK(cli({"--version"}).out.find(headpose::kVersion) != std::string::npos);
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"fit", "--help"}).code == 0);
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"make-model", "--bogus", "1", "--out", "x"}).code == 1);
  CHECK(cli({"gradcheck", "--losses", "nonsense"}).code == 1);
  const fs::path dir = testing::scratch_dir("cli_codes");
  const auto missing = cli({"evaluate", "--pred", (dir / "none.jsonl").string(), "--gt", (dir / "none.jsonl").string()});
  CHECK(missing.code != 0);
  CHECK_FALSE(missing.err.empty());
  headpose::write_file_atomic(dir / "bad.jsonl", "{\"id\":\"a\",\"quat\":[1,2]}\n");
  CHECK(cli({"evaluate", "--pred", (dir / "bad.jsonl").string(), "--gt", (dir / "bad.jsonl").string()}).code == 1);
}

TEST_CASE("every command runs and reruns byte-identically") {
  const fs::path dir = testing::scratch_dir("cli_all");
  testing::write_cli_inputs(dir);
  const auto first = testing::run_all_commands(dir);
  for (const auto& [name, r] : first) {
    INFO(name << ": " << r.err);
    CHECK(r.code == 0);
  }
  const auto files = testing::snapshot(dir / "out");
  const auto second = testing::run_all_commands(dir);
  REQUIRE(second.size() == first.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(second[i].second.out == first[i].second.out);
  CHECK(testing::snapshot(dir / "out") == files);

  const fs::path o = dir / "out";
  for (const auto& r : headpose::read_samples(o / "fit.jsonl")) CHECK(r.id.rfind("fit_", 0) == 0);
  const auto fit = testing::slurp(o / "fit.jsonl");
  CHECK(fit.find("\"converged\":true") != std::string::npos);
  CHECK(fit.find("\"converged\":false") == std::string::npos);

  const auto report = nlohmann::json::parse(testing::slurp(o / "report.json"));
  CHECK(report.at("count") == 8);
  CHECK(report.at("geodesic").get<double>() < 10.0);

  const auto sweep = nlohmann::json::parse(testing::slurp(o / "sweep.json"));
  REQUIRE(sweep.at("noise_sweep").size() == 2);
  CHECK(sweep.at("noise_sweep")[0].at("spread").get<double>() < 1e-12);
  CHECK(sweep.at("noise_sweep")[1].at("spread").get<double>() == doctest::Approx(1.0));

  CHECK(fs::exists(o / "noise/sigma_4/trial_01/img1.pgm"));
  CHECK(headpose::read_pgm(o / "noise/sigma_0/trial_00/img0.pgm") == headpose::read_pgm(dir / "images/img0.pgm"));
  CHECK(headpose::read_samples(o / "aug/labels.jsonl").size() == 4);
  CHECK(headpose::read_pgm(o / "aug/img1_1.pgm").width == 64);
  const auto mix = testing::slurp(o / "mix.csv");
  CHECK(mix.rfind("dataset,index\n", 0) == 0);
  CHECK(std::count(mix.begin(), mix.end(), '\n') == 501);
  const auto summary = nlohmann::json::parse(testing::slurp(o / "train/summary.json"));
  CHECK(summary.at("final_loss").get<double>() < summary.at("initial_loss").get<double>());
  CHECK(fs::exists(o / "train/head.json"));
  CHECK(testing::snapshot(o / "train").count("trace.csv") == 1);
}

TEST_CASE("seed changes the output") {
  const fs::path dir = testing::scratch_dir("cli_seed");
  testing::write_cli_inputs(dir);
  const auto a = cli({"mix", "--config", (dir / "mix.json").string(), "--n", "200", "--out", (dir / "a.csv").string()});
  const auto b = cli({"mix", "--config", (dir / "mix.json").string(), "--n", "200", "--seed", "5", "--out",
                      (dir / "b.csv").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(testing::slurp(dir / "a.csv") != testing::slurp(dir / "b.csv"));
}

}  // TEST_SUITE
