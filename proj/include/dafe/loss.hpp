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

#include <span>
#include <vector>

#include "dafe/anchors.hpp"
#include "dafe/layers.hpp"
#include "dafe/tensor.hpp"

namespace dafe {

struct LossWeights {
  double lambda_b = 1.0;
  double lambda_d = 1.0;

  void validate() const;
};

struct OhemConfig {
  int budget = 256;
  double max_pos_fraction = 0.5;
};

// Anchors chosen for the loss of one detector. N_c = positives + negatives,
// N_r = positives.
struct SelectedAnchors {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;

  std::size_t num_selected() const {
    return positives.size() + negatives.size();
  }
};

// Hard example mining: up to floor(max_pos_fraction * budget) positives with
// the lowest face scores, then the highest-scoring negatives up to the
// budget. Ignore-labelled anchors are never chosen; equal scores are broken
// by anchor index.
SelectedAnchors ohem_select(std::span<const double> face_scores,
                            const MatchResult& match, int budget = 256,
                            double max_pos_fraction = 0.5);

// Softmax face probability per anchor (anchor order of AnchorGrid) for image
// `n` of a (N, 2S, H, W) logit map.
std::vector<double> face_probabilities(const Tensor& cls_logits, int n = 0);

struct LossTerm {
  double value = 0.0;
  std::vector<Tensor> grads;  // one per detector, shaped like its input
  // box loss only: no selected positive anything across detectors.
  bool no_positives = false;
};

// sum_m (1/N_c^m) sum_{selected} cross_entropy. Detectors with an empty
// selection contribute zero. Inputs are single-image (N == 1) maps.
LossTerm cls_loss(std::span<const Tensor> cls_logits,
                  std::span<const MatchResult> matches,
                  std::span<const SelectedAnchors> selections);

double smooth_l1(double x);
double smooth_l1_grad(double x);

// sum_m (1/N_r^m) sum_{selected positives} sum_k smooth_l1(delta_k - t_k).
// `targets[m][a]` is only read for selected positives.
LossTerm box_loss(std::span<const Tensor> box_deltas,
                  std::span<const std::vector<RegressionTarget>> targets,
                  std::span<const SelectedAnchors> selections);

// L = cls + lambda_b * box + lambda_d * den. Throws ValueError naming the
// offending term when any component is non-finite.
double total_loss(double cls, double box, double den,
                  const LossWeights& weights);

struct SgdConfig {
  double base_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double gamma = 0.1;
  std::vector<int> milestones{1600, 1900};

  void validate() const;
  // base_lr * gamma^(number of milestones <= iteration)
  double learning_rate(int iteration) const;
};

struct OptimizerState {
  SgdConfig config;
  std::vector<std::vector<double>> velocity;
  int iteration = 0;
};

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v
// with lr taken at state.iteration, which is then incremented. Throws
// (without touching any parameter) if a gradient is non-finite.
void sgd_step(std::span<const ParamRef> params, OptimizerState& state);

}  // namespace dafe
