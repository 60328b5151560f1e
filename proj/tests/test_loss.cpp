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

#include <algorithm>
#include <cmath>
#include <random>

#include "dafe/error.hpp"
#include "dafe/loss.hpp"
#include "dafe/train.hpp"

namespace dafe {
namespace {

MatchResult labelled(std::size_t pos, std::size_t neg, std::size_t ignore = 0) {
  MatchResult m;
  m.labels.insert(m.labels.end(), pos, AnchorLabel::positive);
  m.labels.insert(m.labels.end(), neg, AnchorLabel::negative);
  m.labels.insert(m.labels.end(), ignore, AnchorLabel::ignore);
  m.matched_gt.assign(m.labels.size(), -1);
  m.max_iou.assign(m.labels.size(), 0.0);
  return m;
}

std::vector<double> uniform_scores(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(n);
  for (double& v : s) v = u(rng);
  return s;
}

TEST(Ohem, UnderBudgetTakesEverything) {
  const MatchResult m = labelled(5, 10, 3);
  const SelectedAnchors s = ohem_select(uniform_scores(18, 1), m);
  EXPECT_EQ(s.positives.size(), 5u);
  EXPECT_EQ(s.negatives.size(), 10u);
  EXPECT_EQ(s.num_selected(), 15u);
}

TEST(Ohem, CapsPositivesAndPicksHardest) {
  const MatchResult m = labelled(200, 400);
  const std::vector<double> scores = uniform_scores(600, 2);
  const SelectedAnchors s = ohem_select(scores, m, 256, 0.5);
  ASSERT_EQ(s.positives.size(), 128u);
  ASSERT_EQ(s.negatives.size(), 128u);
  // Sorting oracle.
  std::vector<double> pos(scores.begin(), scores.begin() + 200);
  std::vector<double> neg(scores.begin() + 200, scores.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<double> got_pos, got_neg;
  for (std::size_t a : s.positives) got_pos.push_back(scores[a]);
  for (std::size_t a : s.negatives) got_neg.push_back(scores[a]);
  std::sort(got_pos.begin(), got_pos.end());
  std::sort(got_neg.begin(), got_neg.end(), std::greater<>());
  EXPECT_TRUE(std::equal(got_pos.begin(), got_pos.end(), pos.begin()));
  EXPECT_TRUE(std::equal(got_neg.begin(), got_neg.end(), neg.begin()));
}

TEST(Ohem, FewPositivesLeaveRoomForNegatives) {
  const SelectedAnchors s = ohem_select(uniform_scores(1003, 3), labelled(3, 1000), 256);
  EXPECT_EQ(s.positives.size(), 3u);
  EXPECT_EQ(s.negatives.size(), 253u);
}

TEST(Ohem, IgnoreOnlyAndErrors) {
  EXPECT_EQ(ohem_select(uniform_scores(9, 4), labelled(0, 0, 9)).num_selected(), 0u);
  EXPECT_THROW(ohem_select(uniform_scores(8, 4), labelled(0, 0, 9)), ShapeError);
  EXPECT_THROW(ohem_select(uniform_scores(9, 4), labelled(0, 0, 9), 0), ValueError);
}

TEST(Ohem, HardnessProperty) {
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    const MatchResult m = labelled(300, 500, 100);
    const auto scores = uniform_scores(900, seed);
    const SelectedAnchors s = ohem_select(scores, m, 256, 0.5);
    std::vector<char> taken(900, 0);
    for (std::size_t a : s.positives) taken[a] = 1;
    for (std::size_t a : s.negatives) taken[a] = 1;
    double worst_pos = 0.0, worst_neg = 1.0;
    for (std::size_t a : s.positives) worst_pos = std::max(worst_pos, scores[a]);
    for (std::size_t a : s.negatives) worst_neg = std::min(worst_neg, scores[a]);
    for (std::size_t a = 0; a < 900; ++a) {
      if (taken[a]) continue;
      if (m.labels[a] == AnchorLabel::positive) EXPECT_GE(scores[a], worst_pos);
      if (m.labels[a] == AnchorLabel::negative) EXPECT_LE(scores[a], worst_neg);
    }
    for (std::size_t a = 800; a < 900; ++a) EXPECT_FALSE(taken[a]);
  }
}

TEST(ClsLoss, UniformLogitsGiveLnTwo) {
  const std::vector<Tensor> logits{Tensor(Shape{1, 2, 2, 2}, 0.3)};
  const std::vector<MatchResult> matches{labelled(1, 2, 1)};
  const std::vector<SelectedAnchors> sel{{{0}, {1, 2}}};
  const LossTerm t = cls_loss(logits, matches, sel);
  EXPECT_NEAR(t.value, std::log(2.0), 1e-15);
  EXPECT_NEAR(t.grads[0].at(0, 1, 0, 0), -0.5 / 3, 1e-15);
  EXPECT_NEAR(t.grads[0].at(0, 0, 0, 0), 0.5 / 3, 1e-15);
  EXPECT_EQ(t.grads[0].at(0, 1, 1, 1), 0.0);  // ignore anchor
}

TEST(ClsLoss, ConfidentCorrectIsNearZero) {
  Tensor z(Shape{1, 2, 1, 2});
  z.at(0, 1, 0, 0) = 40.0;  // face
  z.at(0, 0, 0, 1) = 40.0;  // background
  const std::vector<Tensor> logits{z};
  const std::vector<MatchResult> matches{labelled(1, 1)};
  const std::vector<SelectedAnchors> sel{{{0}, {1}}};
  EXPECT_LT(cls_loss(logits, matches, sel).value, 1e-16);
}

TEST(ClsLoss, EachDetectorNormalisedSeparately) {
  const std::vector<Tensor> logits{Tensor(Shape{1, 2, 1, 1}), Tensor(Shape{1, 4, 2, 2})};
  const std::vector<MatchResult> matches{labelled(1, 0), labelled(2, 6)};
  const std::vector<SelectedAnchors> sel{{{0}, {}}, {{0, 1}, {2, 3, 4, 5, 6, 7}}};
  EXPECT_NEAR(cls_loss(logits, matches, sel).value, 2.0 * std::log(2.0), 1e-15);
}

TEST(SmoothL1, ClosedForm) {
  EXPECT_EQ(smooth_l1(0.5), 0.125);
  EXPECT_EQ(smooth_l1(2.0), 1.5);
  EXPECT_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_NEAR(smooth_l1(1.0 - 1e-12), smooth_l1(1.0 + 1e-12), 1e-11);
  EXPECT_EQ(smooth_l1_grad(0.25), 0.25);
  EXPECT_EQ(smooth_l1_grad(-3.0), -1.0);
}

TEST(BoxLoss, ResidualAndNoPositives) {
  Tensor d(Shape{1, 4, 1, 2});
  d.at(0, 0, 0, 1) = 0.5;
  d.at(0, 3, 0, 1) = 2.0;
  const std::vector<Tensor> deltas{d};
  const std::vector<std::vector<RegressionTarget>> targets{{{}, {}}};
  const std::vector<SelectedAnchors> sel{{{1}, {0}}};
  const LossTerm t = box_loss(deltas, targets, sel);
  EXPECT_NEAR(t.value, 0.125 + 1.5, 1e-15);
  EXPECT_FALSE(t.no_positives);
  EXPECT_EQ(t.grads[0].at(0, 3, 0, 1), 1.0);
  const std::vector<SelectedAnchors> none{{{}, {0, 1}}};
  const LossTerm z = box_loss(deltas, targets, none);
  EXPECT_EQ(z.value, 0.0);
  EXPECT_TRUE(z.no_positives);
  const std::vector<std::vector<RegressionTarget>> exact{{{}, {0.5, 0.0, 0.0, 2.0}}};
  EXPECT_EQ(box_loss(deltas, exact, sel).value, 0.0);
}

TEST(TotalLoss, Weighting) {
  EXPECT_EQ(total_loss(1.0, 2.0, 3.0, {2.0, 0.5}), 6.5);
  EXPECT_EQ(total_loss(1.0, 2.0, 3.0, {1.0, 0.0}), 3.0);
  EXPECT_EQ(total_loss(1.0, 2.0, 3.0, {0.0, 0.0}), 1.0);
  for (double ld : {0.5, 1.0, 2.0, 4.0}) {
    EXPECT_NEAR(total_loss(1.0, 2.0, 3.0, {1.0, ld}) - total_loss(1.0, 2.0, 3.0, {1.0, 0.0}),
                3.0 * ld, 1e-15);
  }
  EXPECT_THROW(total_loss(std::nan(""), 0, 0, {}), ValueError);
  EXPECT_THROW(total_loss(0, 0, 0, {-1.0, 0.0}), ValueError);
}

struct OneParam {
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<ParamRef> refs() { return {{"w", Shape{1, 1, 1, 1}, value, grad}}; }
};

TEST(Sgd, PlainStep) {
  OneParam p{{1.0}, {1.0}};
  OptimizerState st{{0.1, 0.0, 0.0, 0.1, {}}, {}, 0};
  sgd_step(p.refs(), st);
  EXPECT_NEAR(p.value[0], 0.9, 1e-15);
}

TEST(Sgd, MomentumTwoSteps) {
  OneParam p{{5.0}, {1.0}};
  OptimizerState st{{1.0, 0.9, 0.0, 0.1, {}}, {}, 0};
  sgd_step(p.refs(), st);
  EXPECT_EQ(st.velocity[0][0], 1.0);
  sgd_step(p.refs(), st);
  EXPECT_NEAR(p.value[0], 5.0 - 2.9, 1e-15);
}

TEST(Sgd, WeightDecayOnly) {
  OneParam p{{1.0}, {0.0}};
  OptimizerState st{{0.001, 0.9, 0.0005, 0.1, {}}, {}, 0};
  sgd_step(p.refs(), st);
  EXPECT_NEAR(st.velocity[0][0], 0.0005, 1e-18);
  EXPECT_NEAR(p.value[0], 0.9999995, 1e-15);
}

TEST(Sgd, RejectsNonFinite) {
  OneParam p{{1.0}, {std::nan("")}};
  OptimizerState st;
  EXPECT_THROW(sgd_step(p.refs(), st), ValueError);
  EXPECT_EQ(p.value[0], 1.0);
}

TEST(Sgd, Schedule) {
  SgdConfig c;
  EXPECT_EQ(c.learning_rate(0), 0.001);
  EXPECT_EQ(c.learning_rate(1599), 0.001);
  EXPECT_NEAR(c.learning_rate(1600), 1e-4, 1e-18);
  EXPECT_NEAR(c.learning_rate(1999), 1e-5, 1e-18);
  c.milestones = {5, 2};
  EXPECT_THROW(c.validate(), ValueError);
}

}  // namespace
}  // namespace dafe
