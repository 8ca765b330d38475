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
#include <vector>

namespace headpose {

struct GradcheckOptions {
  int points = 100;
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  int points = 0;
  long components = 0;
  long failures = 0;
  double max_abs_error = 0.0;
  /// Largest relative error among components outside the absolute floor.
  double max_rel_error = 0.0;

  bool passed() const { return failures == 0; }
};

/// A component passes if |a - n| <= abs_floor or |a - n| / max(|a|, |n|) < rel_tol.
bool gradient_component_ok(double analytic, double numeric, double rel_tol, double abs_floor);

/// Names accepted by run_gradcheck, in report order.
const std::vector<std::string>& gradcheck_names();

/// Central finite differences of every analytic gradient against its value
/// function at random points chosen away from kinks. An empty `names`
/// selects everything.
std::vector<GradcheckResult> run_gradcheck(const std::vector<std::string>& names,
                                           const GradcheckOptions& options = {});

}  // namespace headpose
