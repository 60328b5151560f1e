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

#include <random>
#include <span>
#include <string>
#include <vector>

#include "dafe/tensor.hpp"

namespace dafe {

// Named view of one trainable array and its gradient accumulator.
struct ParamRef {
  std::string name;
  Shape shape;
  std::span<double> value;
  std::span<double> grad;
};

// A convolution with its parameters, gradient accumulators and the cached
// input of the most recent forward call. Not reentrant: backward() consumes
// the state left by the last forward().
class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(std::string name, int in, int out, int kernel, int stride = 1,
            int padding = 0, int dilation = 1);

  Tensor forward(const Tensor& x);
  // Accumulates parameter gradients and returns the input gradient (empty
  // when need_input_grad is false).
  Tensor backward(const Tensor& upstream, bool need_input_grad = true);

  // He fan-in normal init, zero bias.
  void init_he(std::mt19937_64& rng);

  const std::string& name() const { return name_; }
  ConvSpec& spec() { return spec_; }
  const ConvSpec& spec() const { return spec_; }

  void collect(std::vector<ParamRef>& out);
  void zero_grad();

 private:
  std::string name_;
  ConvSpec spec_;
  std::vector<double> bias_grad_;
  Tensor input_;
};

// A learnable scalar (FEM alpha).
struct ScalarParam {
  std::string name;
  double value = 0.0;
  double grad = 0.0;

  void collect(std::vector<ParamRef>& out) {
    out.push_back({name, Shape{1, 1, 1, 1}, std::span<double>(&value, 1),
                   std::span<double>(&grad, 1)});
  }
};

}  // namespace dafe
