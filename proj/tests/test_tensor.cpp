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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dafe/error.hpp"
#include "dafe/gradcheck.hpp"
#include "dafe/tensor.hpp"
#include "test_util.hpp"

namespace dafe {
namespace {

using testing::max_abs_diff;
using testing::randn;

// Direct seven-loop cross-correlation.
Tensor naive_conv(const Tensor& x, const ConvSpec& s) {
  const int oh = (x.h() + 2 * s.padding - s.dilation * (s.kernel_h - 1) - 1) / s.stride + 1;
  const int ow = (x.w() + 2 * s.padding - s.dilation * (s.kernel_w - 1) - 1) / s.stride + 1;
  Tensor y(Shape{x.n(), s.out_channels, oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < s.out_channels; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = s.bias[o];
          for (int c = 0; c < s.in_channels; ++c)
            for (int ki = 0; ki < s.kernel_h; ++ki)
              for (int kj = 0; kj < s.kernel_w; ++kj) {
                const int yy = i * s.stride - s.padding + ki * s.dilation;
                const int xx = j * s.stride - s.padding + kj * s.dilation;
                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) continue;
                acc += s.weights.at(o, c, ki, kj) * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

ConvSpec random_spec(std::mt19937_64& rng, int cin, int cout, int k, int stride,
                     int pad, int dil) {
  ConvSpec s = ConvSpec::make(cin, cout, k, stride, pad, dil);
  s.weights = randn(s.weights.shape(), rng);
  std::normal_distribution<double> d;
  for (double& b : s.bias) b = d(rng);
  return s;
}

TEST(Tensor, RejectsBadShapesAndSizes) {
  EXPECT_THROW(Tensor(Shape{1, 0, 2, 2}), ShapeError);
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
  Tensor t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_DOUBLE_EQ(t.sum(), 180.0);
  t.ensure_grad();
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Tensor, StorageIsAligned) {
  for (int k = 1; k < 20; ++k) {
    Tensor t(Shape{1, 1, 1, k});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data().data()) % 64, 0u);
  }
}

TEST(Conv, IdentityKernel) {
  std::mt19937_64 rng(1);
  const Tensor x = randn(Shape{2, 1, 4, 5}, rng);
  ConvSpec s = ConvSpec::make(1, 1, 1);
  s.weights.fill(1.0);
  EXPECT_EQ(max_abs_diff(conv2d(x, s), x), 0.0);
  const Tensor g = randn(x.shape(), rng);
  EXPECT_EQ(max_abs_diff(conv2d_backward(x, s, g).input_grad, g), 0.0);
}

TEST(Conv, AllOnesKernelSumsWindow) {
  ConvSpec s = ConvSpec::make(1, 1, 3);
  s.weights.fill(1.0);
  const Tensor y = conv2d(Tensor(Shape{1, 1, 3, 3}, 1.0), s);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 9.0);
}

TEST(Conv, DilatedShape) {
  ConvSpec s = ConvSpec::make(1, 3, 3, 1, 0, 2);
  EXPECT_EQ(conv2d(Tensor(Shape{1, 1, 5, 5}), s).shape(), (Shape{1, 3, 1, 1}));
  EXPECT_THROW(conv2d(Tensor(Shape{1, 1, 4, 4}), s), ShapeError);
}

TEST(Conv, ShapeLawSweep) {
  for (int stride = 1; stride <= 3; ++stride)
    for (int pad = 0; pad <= 3; ++pad)
      for (int dil = 1; dil <= 3; ++dil)
        for (int k : {1, 3, 5})
          for (int h = 1; h <= 9; ++h) {
            const ConvSpec s = ConvSpec::make(1, 1, k, stride, pad, dil);
            const int extent = dil * (k - 1) + 1;
            if (extent > h + 2 * pad) {
              EXPECT_THROW(s.output_shape(Shape{1, 1, h, h}), ShapeError);
              continue;
            }
            const int expect = (h + 2 * pad - extent) / stride + 1;
            EXPECT_EQ(s.output_shape(Shape{1, 1, h, h}), (Shape{1, 1, expect, expect}));
          }
}

TEST(Conv, MatchesNaiveLoops) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    std::uniform_int_distribution<int> u(1, 3);
    const int k = trial % 3 == 0 ? 1 : 3;
    const int stride = u(rng) > 2 ? 2 : 1;
    const int dil = trial % 2 == 0 ? 1 : u(rng);
    const int pad = u(rng) - 1;
    const ConvSpec s = random_spec(rng, u(rng), u(rng), k, stride, pad, dil);
    const Tensor x = randn(Shape{u(rng), s.in_channels, 6 + u(rng), 7 + u(rng)}, rng);
    EXPECT_LT(max_abs_diff(conv2d(x, s), naive_conv(x, s)), 1e-12);
  }
}

TEST(Conv, Linearity) {
  std::mt19937_64 rng(3);
  ConvSpec s = random_spec(rng, 2, 3, 3, 2, 1, 1);
  std::fill(s.bias.begin(), s.bias.end(), 0.0);
  const Tensor x = randn(Shape{1, 2, 7, 6}, rng);
  const Tensor y = randn(x.shape(), rng);
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 1.7 * x[i] - 0.3 * y[i];
  const Tensor cx = conv2d(x, s);
  const Tensor cy = conv2d(y, s);
  Tensor expect(cx.shape());
  for (std::size_t i = 0; i < cx.size(); ++i) expect[i] = 1.7 * cx[i] - 0.3 * cy[i];
  EXPECT_LT(max_abs_diff(conv2d(mix, s), expect), 1e-10);
}

TEST(Conv, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(4);
  const ConvSpec s = random_spec(rng, 2, 2, 3, 1, 1, 1);
  const Tensor x = randn(Shape{1, 2, 5, 5}, rng);
  const ConvGrads g = conv2d_backward(x, s, Tensor(conv2d(x, s).shape()));
  for (double v : g.input_grad.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.weight_grad.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.bias_grad) EXPECT_EQ(v, 0.0);
}

TEST(Conv, WeightGradOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  ConvSpec s = random_spec(rng, 2, 1, 3, 1, 0, 1);
  const Tensor x = randn(Shape{1, 2, 5, 5}, rng);
  const Tensor ones(conv2d(x, s).shape(), 1.0);
  const ConvGrads g = conv2d_backward(x, s, ones);
  const std::vector<GradCheckParam> params{
      {"weight", s.weights.data(), g.weight_grad.data()}};
  GradCheckOptions opt;
  opt.eps = 1e-5;
  const auto r = grad_check([&] { return conv2d(x, s).sum(); }, params, opt);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Conv, RepeatedCallsAreBitIdentical) {
  std::mt19937_64 rng(6);
  const ConvSpec s = random_spec(rng, 5, 7, 3, 1, 1, 1);
  const Tensor x = randn(Shape{1, 5, 13, 11}, rng);
  const Tensor a = conv2d(x, s);
  for (int k = 0; k < 5; ++k) {
    std::vector<Tensor> noise;  // shift heap addresses between calls
    for (int j = 0; j <= k; ++j) noise.emplace_back(Shape{1, 1, 1, 3 + j});
    EXPECT_EQ(max_abs_diff(conv2d(x, s), a), 0.0);
  }
}

TEST(MaxPool, WindowAndRouting) {
  const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = maxpool2(x);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 4.0);
  const Tensor g = maxpool2_backward(x, Tensor(y.shape(), 1.0));
  EXPECT_EQ(g.values(), (Buffer{0, 0, 0, 1}));
}

TEST(MaxPool, TiesRouteToFirstArgmax) {
  const Tensor x(Shape{1, 1, 2, 2}, {5, 5, 5, 5});
  const Tensor g = maxpool2_backward(x, Tensor(Shape{1, 1, 1, 1}, 2.0));
  EXPECT_EQ(g.values(), (Buffer{2, 0, 0, 0}));
}

TEST(MaxPool, ConstantAndOddSizes) {
  const Tensor y = maxpool2(Tensor(Shape{2, 3, 5, 7}, -2.5));
  EXPECT_EQ(y.shape(), (Shape{2, 3, 3, 4}));
  for (double v : y.values()) EXPECT_EQ(v, -2.5);
  const Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(maxpool2(x).values(), (Buffer{5, 6, 8, 9}));
}

TEST(Bilinear, HandInterpolation) {
  const Tensor x(Shape{1, 1, 1, 2}, {0, 2});
  EXPECT_EQ(bilinear_upsample(x, 1, 3).values(), (Buffer{0, 1, 2}));
}

TEST(Bilinear, ConstantsAndCorners) {
  std::mt19937_64 rng(7);
  for (int oh : {3, 4, 9})
    for (int ow : {3, 5, 8}) {
      const Tensor flat = bilinear_upsample(Tensor(Shape{1, 2, 3, 3}, 0.75), oh, ow);
      for (double v : flat.values()) EXPECT_NEAR(v, 0.75, 1e-15);
      const Tensor x = randn(Shape{1, 1, 3, 3}, rng);
      const Tensor y = bilinear_upsample(x, oh, ow);
      EXPECT_EQ(y.at(0, 0, 0, 0), x.at(0, 0, 0, 0));
      EXPECT_EQ(y.at(0, 0, 0, ow - 1), x.at(0, 0, 0, 2));
      EXPECT_EQ(y.at(0, 0, oh - 1, 0), x.at(0, 0, 2, 0));
      EXPECT_EQ(y.at(0, 0, oh - 1, ow - 1), x.at(0, 0, 2, 2));
    }
  EXPECT_THROW(bilinear_upsample(Tensor(Shape{1, 1, 4, 4}), 2, 2), ShapeError);
}

TEST(Bilinear, BackwardIsAdjoint) {
  std::mt19937_64 rng(8);
  const Tensor x = randn(Shape{1, 2, 3, 4}, rng);
  const Tensor g = randn(Shape{1, 2, 7, 9}, rng);
  const Tensor y = bilinear_upsample(x, 7, 9);
  const Tensor gx = bilinear_upsample_backward(g, 3, 4);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Elementwise, ConcatReluAddScaleAdd) {
  std::mt19937_64 rng(9);
  const Tensor a = randn(Shape{1, 2, 3, 3}, rng);
  const Tensor b = randn(Shape{1, 3, 3, 3}, rng);
  const Tensor c = concat_channels({&a, &b});
  ASSERT_EQ(c.shape(), (Shape{1, 5, 3, 3}));
  EXPECT_EQ(c.at(0, 1, 2, 1), a.at(0, 1, 2, 1));
  EXPECT_EQ(c.at(0, 4, 0, 2), b.at(0, 2, 0, 2));
  const std::vector<int> ch{2, 3};
  const auto parts = concat_channels_backward(c, ch);
  EXPECT_EQ(max_abs_diff(parts[0], a), 0.0);
  EXPECT_EQ(max_abs_diff(parts[1], b), 0.0);

  const Tensor r = relu(Tensor(Shape{1, 1, 1, 2}, {-1.0, 2.0}));
  EXPECT_EQ(r.values(), (Buffer{0.0, 2.0}));
  EXPECT_EQ(max_abs_diff(scale_add(a, a, 0.0), a), 0.0);
  EXPECT_EQ(max_abs_diff(add(a, a), scale_add(a, a, 1.0)), 0.0);
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Pad, ReflectToMultiple) {
  const Tensor x(Shape{1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor p = pad_to_multiple(x, 4);
  ASSERT_EQ(p.shape(), (Shape{1, 1, 4, 4}));
  // Columns reflect about the last column, rows about the last row.
  EXPECT_EQ(p.at(0, 0, 0, 3), 2.0);
  EXPECT_EQ(p.at(0, 0, 2, 0), 1.0);
  EXPECT_EQ(p.at(0, 0, 2, 3), 2.0);
  EXPECT_EQ(p.at(0, 0, 1, 2), 6.0);
  const Tensor same = pad_to_multiple(Tensor(Shape{1, 1, 32, 64}, 3.0), 32);
  EXPECT_EQ(same.shape(), (Shape{1, 1, 32, 64}));
}

}  // namespace
}  // namespace dafe
