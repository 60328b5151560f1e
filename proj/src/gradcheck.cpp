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

#include "dafe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dafe/error.hpp"

namespace dafe {

double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<const GradCheckParam> params,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw ValueError(detail::concat("grad_check: eps ", options.eps,
                                    " outside [1e-7, 1e-3]"));
  }
  auto evaluate = [&loss] {
    const double v = loss();
    if (!std::isfinite(v)) throw ValueError("grad_check: non-finite loss");
    return v;
  };
  evaluate();

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (const GradCheckParam& p : params) {
    if (p.values.size() != p.analytic.size()) {
      throw ShapeError(detail::concat("grad_check: parameter ", p.name, " has ",
                                      p.values.size(), " values but ",
                                      p.analytic.size(), " gradients"));
    }
    std::vector<std::size_t> entries(p.values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_param > 0 &&
        entries.size() > options.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      const double saved = p.values[i];
      p.values[i] = saved + options.eps;
      const double plus = evaluate();
      p.values[i] = saved - options.eps;
      const double minus = evaluate();
      p.values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double err = relative_error(p.analytic[i], numeric);
      ++result.entries_checked;
      if (err > result.max_relative_error || result.worst_param.empty()) {
        result.max_relative_error = std::max(result.max_relative_error, err);
        if (err >= result.max_relative_error) {
          result.worst_param = p.name;
          result.worst_index = i;
          result.worst_analytic = p.analytic[i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace dafe
