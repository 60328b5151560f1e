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
#include <span>
#include <string>
#include <vector>

#include "dafe/gradcheck.hpp"

namespace dafe {

// Finite-difference checks of every differentiable op, module and the full
// detection pipeline. Each check draws random inputs and parameters from
// `seed` and compares the analytic gradient of a random linear functional
// of the op output (or of the loss itself) against central differences.
const std::vector<std::string>& gradient_suite_ops();

GradCheckResult check_op_gradients(const std::string& op, std::uint64_t seed);

struct GradSuiteEntry {
  std::string op;
  std::uint64_t seed = 0;
  GradCheckResult result;
  // Random draws needed to find a point whose difference stencil stays on
  // one smooth piece.
  int draws = 1;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double max_error = 0.0;
  bool passed = true;
};

GradSuiteReport run_gradient_suite(std::span<const std::uint64_t> seeds,
                                   double tolerance = 1e-4);

}  // namespace dafe
