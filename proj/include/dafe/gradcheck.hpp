// Copyright 2026 The dafe-fd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dafe {

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
double relative_error(double analytic, double numeric);

struct GradCheckParam {
  std::string name;
  std::span<double> values;           // perturbed in place, then restored
  std::span<const double> analytic;   // same length as values
};

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every entry; otherwise a seeded random subset per parameter.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Central-difference check of `analytic` against `loss`. The loss closure
// must re-run the forward pass from the current parameter values.
GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<const GradCheckParam> params,
                           const GradCheckOptions& options = {});

}  // namespace dafe
