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
#include <benchmark/benchmark.h>

#include <vector>

#include "headpose/augment.hpp"
#include "headpose/facemodel.hpp"
#include "headpose/fitting.hpp"
#include "headpose/geometry.hpp"
#include "headpose/losses.hpp"
#include "headpose/rng.hpp"
#include "headpose/trainer.hpp"

using namespace headpose;

namespace {

void BM_LogExpRoundTrip(benchmark::State& state) {
  const Quaternion q = from_euler({30, -20, 10});
  for (auto _ : state) benchmark::DoNotOptimize(exp_map(log_map(q)));
}
BENCHMARK(BM_LogExpRoundTrip);

void BM_RotNllGrad(benchmark::State& state) {
  const std::array<double, 4> z{0.1, -0.2, 0.05, 0.9};
  const std::array<double, 6> m{0.3, 0.01, 0.2, -0.02, 0.03, 0.25};
  const Quaternion q = from_euler({10, 5, -3});
  for (auto _ : state) benchmark::DoNotOptimize(rot_nll_grad(z, m, q));
}
BENCHMARK(BM_RotNllGrad);

void BM_TotalLoss(benchmark::State& state) {
  TaskConfig tc;
  tc.n = static_cast<int>(state.range(0));
  const SyntheticTask task = make_synthetic_task(tc);
  const LinearHead head = LinearHead::initial(tc.input_dim);
  std::vector<LossSample> batch;
  for (int i = 0; i < tc.n; ++i) batch.push_back({head.forward(task.inputs[i]), &task.labels[i]});
  TotalLossOptions opt;
  opt.model = &task.model;
  for (auto _ : state) benchmark::DoNotOptimize(total_loss(batch, head.aux, opt));
  state.SetItemsProcessed(state.iterations() * tc.n);
}
BENCHMARK(BM_TotalLoss)->Arg(64);

void BM_Landmarks(benchmark::State& state) {
  const DeformableModel m = synthetic_model(0);
  const Pose pose{from_euler({20, 10, 0}), 0.1, 0.0, 0.5};
  const ShapeCoeffs phi = ShapeCoeffs::Constant(0.3);
  for (auto _ : state) benchmark::DoNotOptimize(landmarks68(m, phi, pose));
}
BENCHMARK(BM_Landmarks);

void BM_Fit(benchmark::State& state) {
  const DeformableModel m = synthetic_model(1);
  const GaussianMixture prior =
      GaussianMixture::single(Eigen::VectorXd::Zero(kShapeDim), Eigen::VectorXd::Constant(kShapeDim, 0.25));
  SeededRng rng(2);
  const SyntheticFitCase c = make_synthetic_fit_case(m, prior, rng, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(fit(c.problem, c.problem.prior_pose, ShapeCoeffs::Zero()));
}
BENCHMARK(BM_Fit)->Unit(benchmark::kMillisecond);

void BM_AugmentSample(benchmark::State& state) {
  GrayImage img(320, 240);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.at(x, y) = static_cast<std::uint8_t>((x + 2 * y) % 256);
  SampleRecord lab;
  lab.id = "b";
  lab.rotation = Quaternion::identity();
  lab.pos_size = PosSize{0.0, 0.0, 0.3};
  lab.bbox = Box{0.0, 0.0, 0.4, 0.5};
  SeededRng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(augment_sample(img, lab, rng));
}
BENCHMARK(BM_AugmentSample)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
