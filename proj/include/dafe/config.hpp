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

#include <filesystem>
#include <string>

#include "dafe/density.hpp"
#include "dafe/eval.hpp"
#include "dafe/network.hpp"
#include "dafe/train.hpp"

namespace dafe {

// Everything a run needs, read from a plain-text key=value file:
//
//   # comment
//   [backbone]
//   widths = 8,16,32,64,64
//   [loss]
//   lambda_d = 1
//
// Keys may also be written fully qualified ("loss.lambda_d = 1"). Unknown
// keys and invalid values are rejected with the offending line.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  GaussianSpec gaussian;
  PostprocessConfig post;

  void validate() const;
};

RunConfig parse_run_config(const std::string& text,
                           const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical text form; parse_run_config(to_text(c)) reproduces c exactly.
std::string to_text(const RunConfig& config);

// "fixed:4" (pixels) or "adaptive:0.25" applied on top of `base`.
GaussianSpec parse_sigma_option(const std::string& value, GaussianSpec base = {});

}  // namespace dafe
