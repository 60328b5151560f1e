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

#include <array>
#include <random>
#include <span>
#include <vector>

#include "dafe/layers.hpp"
#include "dafe/tensor.hpp"

namespace dafe {

// Center of an annotated face plus its box extent (pixels).
struct FacePoint {
  double x = 0.0;
  double y = 0.0;
  double box_w = 1.0;
  double box_h = 1.0;
};

enum class SigmaMode { fixed, box_adaptive };

// Ground-truth kernel configuration.
//
// fixed:        sigma = sigma_fixed / stride map cells
// box_adaptive: sigma = max(1, adaptive_coeff * sqrt(box_w * box_h)) / stride
//
// Each deposit is cut at truncation_radius * sigma (and at the map border).
// With normalize_after_truncation the surviving weights are rescaled to sum
// to one, so the map mass equals the number of faces.
struct GaussianSpec {
  SigmaMode sigma_mode = SigmaMode::box_adaptive;
  double sigma_fixed = 4.0;
  double adaptive_coeff = 0.25;
  double truncation_radius = 3.0;
  bool normalize_after_truncation = true;

  void validate() const;
  double sigma_cells(const FacePoint& p, int stride) const;
};

// Single-channel non-negative map at 1/stride of the image resolution.
class DensityMap {
 public:
  DensityMap() = default;
  DensityMap(int height, int width, int stride, std::vector<double> grid);

  int height() const { return height_; }
  int width() const { return width_; }
  int stride() const { return stride_; }
  double mass() const { return mass_; }
  const std::vector<double>& grid() const { return grid_; }
  double at(int row, int col) const {
    return grid_[static_cast<std::size_t>(row) * width_ + col];
  }

  // (1, 1, H, W) view of the grid.
  Tensor to_tensor() const;

 private:
  int height_ = 0;
  int width_ = 0;
  int stride_ = 1;
  std::vector<double> grid_;
  double mass_ = 0.0;
};

// Map dims are ceil(image / stride). Cell (i, j) is centred on pixel
// ((j + 0.5) * stride, (i + 0.5) * stride).
DensityMap generate_gt_density(std::span<const FacePoint> points, int image_w,
                               int image_h, int stride,
                               const GaussianSpec& spec);

// Stacks single-image maps into an (N, 1, H, W) tensor.
Tensor stack_density(std::span<const DensityMap> maps);

struct DemConfig {
  int reduce_width = 8;
};

// Density estimator over the first three backbone taps (strides 1, 2, 4).
// tap1 is pooled twice and tap2 once to tap3 resolution; each tap goes
// through a 1x1 reduction and a 3x3 conv + relu; the three branches are
// concatenated and merged by a 1x1 conv to one channel, then relu'd.
class DensityEstimator {
 public:
  DensityEstimator() = default;
  DensityEstimator(const std::string& prefix,
                   const std::array<int, 3>& tap_channels,
                   const DemConfig& config);

  Tensor forward(const Tensor& tap1, const Tensor& tap2, const Tensor& tap3);
  // Concatenated branch features from the last forward (3 * reduce_width
  // channels at tap3 resolution).
  const Tensor& features() const { return features_; }
  int feature_channels() const { return 3 * config_.reduce_width; }

  struct TapGrads {
    Tensor tap1;
    Tensor tap2;
    Tensor tap3;
  };
  // `features_grad` (optional) is added to the gradient reaching the
  // concatenated features.
  TapGrads backward(const Tensor& density_grad,
                    const Tensor* features_grad = nullptr);

  void init(std::mt19937_64& rng);
  void collect(std::vector<ParamRef>& out);
  void zero_grad();

 private:
  DemConfig config_;
  std::array<ConvLayer, 3> reduce_;
  std::array<ConvLayer, 3> conv_;
  ConvLayer merge_;
  // forward caches
  Tensor tap1_;
  Tensor tap1_pooled_once_;
  Tensor tap2_;
  std::array<Tensor, 3> branch_pre_;
  Tensor features_;
  Tensor merged_;
};

enum class DensityLossNorm {
  // (1/N) * sum_i ||r_i||^2 / cells
  squared_mean,
  // (1/N) * sum_i ||r_i||
  l2,
};

struct DensityLoss {
  double value = 0.0;
  Tensor grad;  // d value / d predicted
};

DensityLoss density_loss(const Tensor& predicted, const Tensor& target,
                         DensityLossNorm norm = DensityLossNorm::squared_mean);

}  // namespace dafe
