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

#include "dafe/layers.hpp"

#include <algorithm>
#include <cmath>

namespace dafe {

ConvLayer::ConvLayer(std::string name, int in, int out, int kernel,
                     int stride, int padding, int dilation)
    : name_(std::move(name)),
      spec_(ConvSpec::make(in, out, kernel, stride, padding, dilation)) {
  spec_.validate();
  spec_.weights.ensure_grad();
  bias_grad_.assign(spec_.bias.size(), 0.0);
}

Tensor ConvLayer::forward(const Tensor& x) {
  input_ = x;
  return conv2d(x, spec_);
}

Tensor ConvLayer::backward(const Tensor& upstream, bool need_input_grad) {
  ConvGrads g = conv2d_backward(input_, spec_, upstream, need_input_grad);
  auto wg = spec_.weights.grad();
  auto gw = g.weight_grad.data();
  for (std::size_t i = 0; i < wg.size(); ++i) wg[i] += gw[i];
  for (std::size_t i = 0; i < bias_grad_.size(); ++i) {
    bias_grad_[i] += g.bias_grad[i];
  }
  return std::move(g.input_grad);
}

void ConvLayer::init_he(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(spec_.in_channels) *
                        spec_.kernel_h * spec_.kernel_w;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& w : spec_.weights.data()) w = dist(rng);
  std::fill(spec_.bias.begin(), spec_.bias.end(), 0.0);
}

void ConvLayer::collect(std::vector<ParamRef>& out) {
  out.push_back({name_ + ".weight", spec_.weights.shape(),
                 spec_.weights.data(), spec_.weights.grad()});
  out.push_back({name_ + ".bias",
                 Shape{1, spec_.out_channels, 1, 1},
                 std::span<double>(spec_.bias), std::span<double>(bias_grad_)});
}

void ConvLayer::zero_grad() {
  spec_.weights.zero_grad();
  std::fill(bias_grad_.begin(), bias_grad_.end(), 0.0);
}

}  // namespace dafe
