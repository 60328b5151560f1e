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

#include "dafe/density.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dafe/error.hpp"

namespace dafe {

void GaussianSpec::validate() const {
  if (sigma_mode == SigmaMode::fixed && !(sigma_fixed > 0.0)) {
    throw ValueError(detail::concat("gaussian: sigma_fixed must be > 0, got ",
                                    sigma_fixed));
  }
  if (sigma_mode == SigmaMode::box_adaptive && !(adaptive_coeff > 0.0)) {
    throw ValueError(detail::concat(
        "gaussian: adaptive_coeff must be > 0, got ", adaptive_coeff));
  }
  if (!(truncation_radius >= 2.0)) {
    throw ValueError(detail::concat(
        "gaussian: truncation_radius must be >= 2, got ", truncation_radius));
  }
}

double GaussianSpec::sigma_cells(const FacePoint& p, int stride) const {
  const double pixels =
      sigma_mode == SigmaMode::fixed
          ? sigma_fixed
          : std::max(1.0, adaptive_coeff * std::sqrt(p.box_w * p.box_h));
  return pixels / stride;
}

DensityMap::DensityMap(int height, int width, int stride,
                       std::vector<double> grid)
    : height_(height), width_(width), stride_(stride), grid_(std::move(grid)) {
  if (height_ < 1 || width_ < 1 || stride_ < 1) {
    throw ShapeError(detail::concat("density map dims ", height_, "x", width_,
                                    " stride ", stride_, " invalid"));
  }
  if (grid_.size() != static_cast<std::size_t>(height_) * width_) {
    throw ShapeError("density grid size does not match its dims");
  }
  for (double v : grid_) {
    if (!(v >= 0.0)) throw ValueError("density map cells must be >= 0");
  }
  mass_ = std::accumulate(grid_.begin(), grid_.end(), 0.0);
}

Tensor DensityMap::to_tensor() const {
  return Tensor(Shape{1, 1, height_, width_}, grid_);
}

DensityMap generate_gt_density(std::span<const FacePoint> points, int image_w,
                               int image_h, int stride,
                               const GaussianSpec& spec) {
  if (image_w < 1 || image_h < 1) {
    throw ShapeError(detail::concat("density: empty image dims ", image_w, "x",
                                    image_h));
  }
  if (stride < 1) throw ValueError("density: stride must be >= 1");
  spec.validate();
  const int map_w = (image_w + stride - 1) / stride;
  const int map_h = (image_h + stride - 1) / stride;
  std::vector<double> grid(static_cast<std::size_t>(map_w) * map_h, 0.0);

  std::vector<double> kernel;
  for (std::size_t idx = 0; idx < points.size(); ++idx) {
    const FacePoint& p = points[idx];
    if (!(p.x >= 0.0 && p.x <= image_w && p.y >= 0.0 && p.y <= image_h) ||
        !(p.box_w > 0.0 && p.box_h > 0.0)) {
      throw ValueError(detail::concat("density: point ", idx, " (", p.x, ", ",
                                      p.y, ") outside ", image_w, "x",
                                      image_h, " image or has empty box"));
    }
    const double sigma = spec.sigma_cells(p, stride);
    const double radius = spec.truncation_radius * sigma;
    // Point position in cell-index coordinates.
    const double u = p.x / stride - 0.5;
    const double v = p.y / stride - 0.5;
    const int x0 = std::max(0, static_cast<int>(std::ceil(u - radius)));
    const int x1 = std::min(map_w - 1, static_cast<int>(std::floor(u + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(v - radius)));
    const int y1 = std::min(map_h - 1, static_cast<int>(std::floor(v + radius)));

    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    const double peak = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    const int kw = std::max(0, x1 - x0 + 1);
    const int kh = std::max(0, y1 - y0 + 1);
    kernel.assign(static_cast<std::size_t>(kw) * kh, 0.0);
    double total = 0.0;
    for (int i = 0; i < kh; ++i) {
      const double dy = (y0 + i) - v;
      for (int j = 0; j < kw; ++j) {
        const double dx = (x0 + j) - u;
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        const double value = peak * std::exp(-d2 * inv_two_var);
        kernel[static_cast<std::size_t>(i) * kw + j] = value;
        total += value;
      }
    }
    if (spec.normalize_after_truncation) {
      if (total > 0.0) {
        for (double& k : kernel) k /= total;
      } else {
        // Kernel narrower than the cell pitch: put the unit mass on the
        // nearest cell.
        const int cx = std::clamp(static_cast<int>(std::lround(u)), 0, map_w - 1);
        const int cy = std::clamp(static_cast<int>(std::lround(v)), 0, map_h - 1);
        grid[static_cast<std::size_t>(cy) * map_w + cx] += 1.0;
        continue;
      }
    }
    for (int i = 0; i < kh; ++i) {
      double* row = grid.data() + static_cast<std::size_t>(y0 + i) * map_w + x0;
      const double* src = kernel.data() + static_cast<std::size_t>(i) * kw;
      for (int j = 0; j < kw; ++j) row[j] += src[j];
    }
  }
  return DensityMap(map_h, map_w, stride, std::move(grid));
}

Tensor stack_density(std::span<const DensityMap> maps) {
  if (maps.empty()) throw ShapeError("stack_density: no maps");
  const int h = maps.front().height();
  const int w = maps.front().width();
  Tensor out(Shape{static_cast<int>(maps.size()), 1, h, w});
  double* dst = out.data().data();
  for (const DensityMap& m : maps) {
    if (m.height() != h || m.width() != w) {
      throw ShapeError("stack_density: maps differ in size");
    }
    dst = std::copy(m.grid().begin(), m.grid().end(), dst);
  }
  return out;
}

DensityEstimator::DensityEstimator(const std::string& prefix,
                                   const std::array<int, 3>& tap_channels,
                                   const DemConfig& config)
    : config_(config) {
  if (config_.reduce_width < 1) {
    throw ValueError("dem: reduce_width must be >= 1");
  }
  const int r = config_.reduce_width;
  for (int k = 0; k < 3; ++k) {
    const std::string id = std::to_string(k + 1);
    reduce_[k] = ConvLayer(prefix + ".reduce" + id, tap_channels[k], r, 1);
    conv_[k] = ConvLayer(prefix + ".conv" + id, r, r, 3, 1, 1);
  }
  merge_ = ConvLayer(prefix + ".merge", 3 * r, 1, 1);
}

Tensor DensityEstimator::forward(const Tensor& tap1, const Tensor& tap2,
                                 const Tensor& tap3) {
  const Shape s3 = tap3.shape();
  const int h1 = ((tap1.h() + 1) / 2 + 1) / 2;
  const int w1 = ((tap1.w() + 1) / 2 + 1) / 2;
  if (tap1.n() != s3.n || tap2.n() != s3.n || h1 != s3.h || w1 != s3.w ||
      (tap2.h() + 1) / 2 != s3.h || (tap2.w() + 1) / 2 != s3.w) {
    throw ShapeError("dem: tap stride mismatch " + to_string(tap1.shape()) +
                     ", " + to_string(tap2.shape()) + ", " + to_string(s3));
  }
  tap1_ = tap1;
  tap2_ = tap2;
  tap1_pooled_once_ = maxpool2(tap1);
  const std::array<Tensor, 3> inputs{maxpool2(tap1_pooled_once_),
                                     maxpool2(tap2), tap3};
  std::array<Tensor, 3> branches;
  for (int k = 0; k < 3; ++k) {
    branch_pre_[k] = conv_[k].forward(reduce_[k].forward(inputs[k]));
    branches[k] = relu(branch_pre_[k]);
  }
  features_ = concat_channels({&branches[0], &branches[1], &branches[2]});
  merged_ = merge_.forward(features_);
  return relu(merged_);
}

DensityEstimator::TapGrads DensityEstimator::backward(
    const Tensor& density_grad, const Tensor* features_grad) {
  Tensor g_features = merge_.backward(relu_backward(merged_, density_grad));
  if (features_grad != nullptr) add_inplace(g_features, *features_grad);
  const int r = config_.reduce_width;
  const std::array<int, 3> widths{r, r, r};
  std::vector<Tensor> g_branches = concat_channels_backward(g_features, widths);
  std::array<Tensor, 3> g_inputs;
  for (int k = 0; k < 3; ++k) {
    Tensor g = relu_backward(branch_pre_[k], g_branches[static_cast<std::size_t>(k)]);
    g_inputs[k] = reduce_[k].backward(conv_[k].backward(g));
  }
  TapGrads grads;
  grads.tap1 = maxpool2_backward(
      tap1_, maxpool2_backward(tap1_pooled_once_, g_inputs[0]));
  grads.tap2 = maxpool2_backward(tap2_, g_inputs[1]);
  grads.tap3 = std::move(g_inputs[2]);
  return grads;
}

void DensityEstimator::init(std::mt19937_64& rng) {
  for (int k = 0; k < 3; ++k) {
    reduce_[k].init_he(rng);
    conv_[k].init_he(rng);
  }
  merge_.init_he(rng);
}

void DensityEstimator::collect(std::vector<ParamRef>& out) {
  for (int k = 0; k < 3; ++k) {
    reduce_[k].collect(out);
    conv_[k].collect(out);
  }
  merge_.collect(out);
}

void DensityEstimator::zero_grad() {
  for (int k = 0; k < 3; ++k) {
    reduce_[k].zero_grad();
    conv_[k].zero_grad();
  }
  merge_.zero_grad();
}

DensityLoss density_loss(const Tensor& predicted, const Tensor& target,
                         DensityLossNorm norm) {
  if (!(predicted.shape() == target.shape())) {
    throw ShapeError("density_loss: predicted " + to_string(predicted.shape()) +
                     " vs target " + to_string(target.shape()));
  }
  const Shape s = predicted.shape();
  const std::size_t cells = static_cast<std::size_t>(s.c) * s.h * s.w;
  const double batch = s.n;
  DensityLoss loss;
  loss.grad = Tensor(s);
  auto p = predicted.data();
  auto t = target.data();
  auto g = loss.grad.data();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * cells;
    double sq = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
      const double r = p[base + i] - t[base + i];
      sq += r * r;
    }
    if (norm == DensityLossNorm::squared_mean) {
      loss.value += sq / (batch * static_cast<double>(cells));
      const double scale = 2.0 / (batch * static_cast<double>(cells));
      for (std::size_t i = 0; i < cells; ++i) {
        g[base + i] = scale * (p[base + i] - t[base + i]);
      }
    } else {
      const double l2 = std::sqrt(sq);
      loss.value += l2 / batch;
      if (l2 > 0.0) {
        for (std::size_t i = 0; i < cells; ++i) {
          g[base + i] = (p[base + i] - t[base + i]) / (batch * l2);
        }
      }
    }
  }
  return loss;
}

}  // namespace dafe
