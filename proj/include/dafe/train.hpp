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

#include "dafe/anchors.hpp"
#include "dafe/density.hpp"
#include "dafe/loss.hpp"
#include "dafe/network.hpp"

namespace dafe {

// One training image: network-ready tensor (padded to a multiple of 32),
// its face boxes in pixel coordinates and the ground-truth density at the
// stride-4 resolution of the padded image.
struct Sample {
  std::string name;
  Tensor image;
  int width = 0;   // before padding
  int height = 0;  // before padding
  std::vector<Box> faces;
  DensityMap density;
};

// `image` is (1, C, H, W) at original resolution.
Sample make_sample(std::string name, const Tensor& image,
                   std::vector<Box> faces, const GaussianSpec& gaussian);

struct TrainConfig {
  int iterations = 2000;
  std::uint64_t seed = 1;
  LossWeights weights;
  OhemConfig ohem;
  MatchConfig match;
  SgdConfig sgd;
  DensityLossNorm density_norm = DensityLossNorm::squared_mean;
  // Random horizontal flips of the training images.
  bool hflip = false;
  // Iterations (1-based) after which on_checkpoint is called; the last
  // iteration always is.
  std::vector<int> checkpoints;

  void validate() const;
};

struct TraceRow {
  int iteration = 0;  // 1-based
  double cls = 0.0;
  double box = 0.0;
  double den = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  // false when lambda_d == 0: the density term and its gradient were never
  // computed.
  bool density_loss_evaluated = false;
};

using CheckpointFn = std::function<void(int iteration, Network& network)>;

// Sequential SGD on batch-size-1 samples visited in a seeded shuffled
// order. Deterministic for a fixed config, dataset and network init.
TrainResult train(Network& network, std::span<const Sample> dataset,
                  const TrainConfig& config,
                  const CheckpointFn& on_checkpoint = {});

// Per-detector targets and the losses for one image; exposed for tests and
// for the gradient suite.
struct ImageTargets {
  std::vector<MatchResult> matches;
  std::vector<std::vector<RegressionTarget>> targets;
};
ImageTargets build_targets(std::span<const AnchorGrid> grids,
                           std::span<const Box> faces,
                           const MatchConfig& match);

struct StepLosses {
  double cls = 0.0;
  double box = 0.0;
  double den = 0.0;
  double total = 0.0;
  NetworkGrads grads;
};

// Selection, losses and output gradients for one forward pass.
StepLosses compute_losses(const NetworkOutput& out, const ImageTargets& targets,
                          const Tensor* density_target,
                          const TrainConfig& config);

void write_trace_csv(std::span<const TraceRow> trace, const std::string& path);

}  // namespace dafe
