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
#include <numbers>
#include <random>

#include "dafe/density.hpp"
#include "dafe/error.hpp"
#include "test_util.hpp"

namespace dafe {
namespace {

// Per-cell summation straight from the definition: every cell centre
// ((j + 0.5) * stride, (i + 0.5) * stride) receives the 2-D normal density
// of each point, cut at radius R * sigma, without renormalisation.
std::vector<double> summation_oracle(std::span<const FacePoint> pts, int w, int h,
                                     int stride, double sigma_px, double radius) {
  const int mw = (w + stride - 1) / stride;
  const int mh = (h + stride - 1) / stride;
  std::vector<double> grid(static_cast<std::size_t>(mw) * mh, 0.0);
  const double s = sigma_px / stride;
  for (const FacePoint& p : pts) {
    for (int i = 0; i < mh; ++i) {
      for (int j = 0; j < mw; ++j) {
        const double dx = ((j + 0.5) * stride - p.x) / stride;
        const double dy = ((i + 0.5) * stride - p.y) / stride;
        if (std::hypot(dx, dy) > radius * s) continue;
        grid[static_cast<std::size_t>(i) * mw + j] +=
            std::exp(-(dx * dx + dy * dy) / (2 * s * s)) / (2 * std::numbers::pi * s * s);
      }
    }
  }
  return grid;
}

std::vector<FacePoint> random_points(std::mt19937_64& rng, int count, int w, int h) {
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), us(4.0, 60.0);
  std::vector<FacePoint> pts;
  for (int k = 0; k < count; ++k) {
    const double side = us(rng);
    pts.push_back({ux(rng), uy(rng), side, side});
  }
  return pts;
}

TEST(Density, EmptyIsZero) {
  const DensityMap m = generate_gt_density({}, 64, 48, 4, GaussianSpec{});
  EXPECT_EQ(m.width(), 16);
  EXPECT_EQ(m.height(), 12);
  EXPECT_EQ(m.mass(), 0.0);
  for (double v : m.grid()) EXPECT_EQ(v, 0.0);
}

TEST(Density, CentredPointHasUnitMass) {
  const std::vector<FacePoint> p{{32.0, 32.0, 20.0, 20.0}};
  EXPECT_NEAR(generate_gt_density(p, 64, 64, 4, GaussianSpec{}).mass(), 1.0, 1e-6);
}

TEST(Density, BorderLossMatchesSummationOracle) {
  GaussianSpec spec;
  spec.sigma_mode = SigmaMode::fixed;
  spec.sigma_fixed = 8.0;  // 2 cells at stride 4
  spec.normalize_after_truncation = false;
  const std::vector<FacePoint> p{{6.0, 30.0, 16.0, 16.0}};  // 1 cell from the left edge
  const DensityMap m = generate_gt_density(p, 64, 64, 4, spec);
  EXPECT_LT(m.mass(), 1.0);
  const auto oracle = summation_oracle(p, 64, 64, 4, 8.0, 3.0);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(m.grid()[i], oracle[i], 1e-9);
}

TEST(Density, UnnormalisedMatchesOracleOnRandomSets) {
  std::mt19937_64 rng(21);
  GaussianSpec spec;
  spec.sigma_mode = SigmaMode::fixed;
  spec.sigma_fixed = 5.0;
  spec.normalize_after_truncation = false;
  for (int trial = 0; trial < 10; ++trial) {
    const auto pts = random_points(rng, 6, 70, 50);
    const DensityMap m = generate_gt_density(pts, 70, 50, 4, spec);
    const auto oracle = summation_oracle(pts, 70, 50, 4, 5.0, 3.0);
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(m.grid()[i], oracle[i], 1e-9);
  }
}

TEST(Density, MassEqualsCountProperty) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 40; ++trial) {
    const int count = std::uniform_int_distribution<int>(0, 50)(rng);
    auto pts = random_points(rng, count, 96, 80);
    if (count > 1) pts[0].x = 0.0, pts[1].y = 80.0;  // on the border
    const DensityMap m = generate_gt_density(pts, 96, 80, 4, GaussianSpec{});
    EXPECT_NEAR(m.mass(), count, 1e-6);
    for (double v : m.grid()) EXPECT_GE(v, 0.0);
    double s = 0.0;
    for (double v : m.grid()) s += v;
    EXPECT_NEAR(m.mass(), s, 1e-9);
  }
}

TEST(Density, Superposition) {
  std::mt19937_64 rng(23);
  const auto a = random_points(rng, 7, 64, 64);
  const auto b = random_points(rng, 5, 64, 64);
  std::vector<FacePoint> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const DensityMap ma = generate_gt_density(a, 64, 64, 4, GaussianSpec{});
  const DensityMap mb = generate_gt_density(b, 64, 64, 4, GaussianSpec{});
  const DensityMap mab = generate_gt_density(ab, 64, 64, 4, GaussianSpec{});
  for (std::size_t i = 0; i < mab.grid().size(); ++i) {
    EXPECT_NEAR(mab.grid()[i], ma.grid()[i] + mb.grid()[i], 1e-12);
  }
}

TEST(Density, TranslationShiftsDeposit) {
  const std::vector<FacePoint> p{{30.0, 34.0, 24.0, 24.0}};
  const std::vector<FacePoint> q{{30.0 + 3 * 4, 34.0 - 2 * 4, 24.0, 24.0}};
  const DensityMap a = generate_gt_density(p, 96, 96, 4, GaussianSpec{});
  const DensityMap b = generate_gt_density(q, 96, 96, 4, GaussianSpec{});
  for (int i = 2; i < a.height(); ++i) {
    for (int j = 0; j + 3 < a.width(); ++j) {
      EXPECT_NEAR(b.at(i - 2, j + 3), a.at(i, j), 1e-15);
    }
  }
}

TEST(Density, AdaptiveSigma) {
  GaussianSpec spec;
  EXPECT_DOUBLE_EQ(spec.sigma_cells({0, 0, 32, 8}, 4), 0.25 * 16.0 / 4);
  EXPECT_DOUBLE_EQ(spec.sigma_cells({0, 0, 2, 2}, 4), 1.0 / 4);  // floor of 1 px
  spec.sigma_mode = SigmaMode::fixed;
  EXPECT_DOUBLE_EQ(spec.sigma_cells({0, 0, 32, 8}, 4), 1.0);
}

TEST(Density, TinyKernelKeepsUnitMass) {
  const std::vector<FacePoint> p{{9.0, 9.0, 1.0, 1.0}};
  EXPECT_NEAR(generate_gt_density(p, 32, 32, 4, GaussianSpec{}).mass(), 1.0, 1e-12);
}

TEST(Density, Errors) {
  const std::vector<FacePoint> out{{10.0, 10.0, 4.0, 4.0}, {70.0, 5.0, 4.0, 4.0}};
  try {
    generate_gt_density(out, 64, 64, 4, GaussianSpec{});
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("point 1"), std::string::npos);
  }
  EXPECT_THROW(generate_gt_density({}, 0, 64, 4, GaussianSpec{}), ShapeError);
  GaussianSpec bad;
  bad.adaptive_coeff = -1.0;
  EXPECT_THROW(bad.validate(), ValueError);
}

TEST(Dem, ShapeAndZeroInput) {
  DensityEstimator dem("dem", {8, 16, 32}, DemConfig{});
  std::mt19937_64 rng(1);
  dem.init(rng);
  const Tensor t1(Shape{1, 8, 64, 64}), t2(Shape{1, 16, 32, 32}), t3(Shape{1, 32, 16, 16});
  const Tensor d = dem.forward(t1, t2, t3);
  EXPECT_EQ(d.shape(), (Shape{1, 1, 16, 16}));
  for (double v : d.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(dem.forward(t1, t2, Tensor(Shape{1, 32, 8, 8})), ShapeError);
}

TEST(Dem, OutputIsNonNegative) {
  DensityEstimator dem("dem", {2, 3, 4}, DemConfig{});
  std::mt19937_64 rng(2);
  dem.init(rng);
  const Tensor d = dem.forward(testing::randn(Shape{1, 2, 32, 32}, rng),
                               testing::randn(Shape{1, 3, 16, 16}, rng),
                               testing::randn(Shape{1, 4, 8, 8}, rng));
  for (double v : d.values()) EXPECT_GE(v, 0.0);
}

TEST(DensityLoss, ClosedForms) {
  const Tensor t(Shape{2, 1, 3, 4}, 0.25);
  EXPECT_EQ(density_loss(t, t).value, 0.0);
  Tensor p = t;
  for (double& v : p.values()) v += 1.0;
  const DensityLoss l = density_loss(p, t);
  EXPECT_NEAR(l.value, 1.0, 1e-15);
  for (double g : l.grad.values()) EXPECT_NEAR(g, 2.0 / (2 * 12), 1e-15);
  // Plain norm: each image has ||r|| = sqrt(12).
  EXPECT_NEAR(density_loss(p, t, DensityLossNorm::l2).value, std::sqrt(12.0), 1e-12);
  EXPECT_THROW(density_loss(p, Tensor(Shape{1, 1, 3, 4})), ShapeError);
}

TEST(DensityMap, StackAndTensor) {
  const std::vector<FacePoint> p{{16.0, 16.0, 8.0, 8.0}};
  const std::vector<DensityMap> maps{generate_gt_density(p, 32, 32, 4, GaussianSpec{}),
                                     generate_gt_density({}, 32, 32, 4, GaussianSpec{})};
  const Tensor s = stack_density(maps);
  EXPECT_EQ(s.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_NEAR(s.sum(), 1.0, 1e-12);
  EXPECT_EQ(maps[0].to_tensor().shape(), (Shape{1, 1, 8, 8}));
}

}  // namespace
}  // namespace dafe
