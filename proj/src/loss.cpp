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

#include "dafe/loss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "dafe/error.hpp"

namespace dafe {

void LossWeights::validate() const {
  if (!(lambda_b >= 0.0) || !(lambda_d >= 0.0) || !std::isfinite(lambda_b) ||
      !std::isfinite(lambda_d)) {
    throw ValueError(detail::concat("loss weights must be finite and >= 0, got "
                                    "lambda_b=",
                                    lambda_b, " lambda_d=", lambda_d));
  }
}

SelectedAnchors ohem_select(std::span<const double> face_scores,
                            const MatchResult& match, int budget,
                            double max_pos_fraction) {
  if (face_scores.size() != match.labels.size()) {
    throw ShapeError(detail::concat("ohem_select: ", face_scores.size(),
                                    " scores for ", match.labels.size(),
                                    " anchors"));
  }
  if (budget < 1) throw ValueError("ohem_select: budget must be > 0");
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t a = 0; a < match.labels.size(); ++a) {
    if (match.labels[a] == AnchorLabel::positive) pos.push_back(a);
    if (match.labels[a] == AnchorLabel::negative) neg.push_back(a);
  }
  // Hardest positives have the lowest face score.
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    return face_scores[a] < face_scores[b];
  });
  // Hardest negatives have the highest face score.
  std::stable_sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t b) {
    return face_scores[a] > face_scores[b];
  });
  const auto pos_cap = static_cast<std::size_t>(
      std::floor(std::clamp(max_pos_fraction, 0.0, 1.0) * budget));
  SelectedAnchors sel;
  sel.positives.assign(pos.begin(),
                       pos.begin() + static_cast<std::ptrdiff_t>(
                                         std::min(pos.size(), pos_cap)));
  const std::size_t room = static_cast<std::size_t>(budget) - sel.positives.size();
  sel.negatives.assign(
      neg.begin(),
      neg.begin() + static_cast<std::ptrdiff_t>(std::min(neg.size(), room)));
  for (std::size_t a : sel.positives) note_kink_decision(2 * a + 1);
  for (std::size_t a : sel.negatives) note_kink_decision(2 * a + 2);
  return sel;
}

std::vector<double> face_probabilities(const Tensor& cls_logits, int n) {
  const Shape s = cls_logits.shape();
  if (s.c % 2 != 0) {
    throw ShapeError("face_probabilities: odd channel count in " +
                     to_string(s));
  }
  const int scales = s.c / 2;
  std::vector<double> probs(static_cast<std::size_t>(scales) * s.h * s.w);
  std::size_t a = 0;
  for (int k = 0; k < scales; ++k) {
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const double bg = cls_logits.at(n, 2 * k, i, j);
        const double face = cls_logits.at(n, 2 * k + 1, i, j);
        probs[a++] = 1.0 / (1.0 + std::exp(bg - face));
      }
    }
  }
  return probs;
}

namespace {

struct AnchorCell {
  int scale;
  int row;
  int col;
};

AnchorCell anchor_cell(std::size_t a, int h, int w) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto within = static_cast<int>(a % plane);
  return {static_cast<int>(a / plane), within / w, within % w};
}

void require_single_image(const Tensor& t, const char* what) {
  if (t.n() != 1) {
    throw ShapeError(detail::concat(what, ": expects a single image, got ",
                                    to_string(t.shape())));
  }
}

}  // namespace

LossTerm cls_loss(std::span<const Tensor> cls_logits,
                  std::span<const MatchResult> matches,
                  std::span<const SelectedAnchors> selections) {
  if (cls_logits.size() != matches.size() ||
      cls_logits.size() != selections.size()) {
    throw ShapeError("cls_loss: per-detector inputs differ in length");
  }
  LossTerm term;
  for (std::size_t m = 0; m < cls_logits.size(); ++m) {
    const Tensor& logits = cls_logits[m];
    require_single_image(logits, "cls_loss");
    Tensor grad(logits.shape());
    const SelectedAnchors& sel = selections[m];
    const std::size_t count = sel.num_selected();
    if (count > 0) {
      const double inv = 1.0 / static_cast<double>(count);
      auto visit = [&](std::size_t a, int label) {
        const AnchorCell c = anchor_cell(a, logits.h(), logits.w());
        const double z0 = logits.at(0, 2 * c.scale, c.row, c.col);
        const double z1 = logits.at(0, 2 * c.scale + 1, c.row, c.col);
        const double zmax = std::max(z0, z1);
        const double lse =
            zmax + std::log(std::exp(z0 - zmax) + std::exp(z1 - zmax));
        const double p0 = std::exp(z0 - lse);
        const double p1 = std::exp(z1 - lse);
        term.value += inv * (lse - (label == 1 ? z1 : z0));
        grad.at(0, 2 * c.scale, c.row, c.col) += inv * (p0 - (label == 0));
        grad.at(0, 2 * c.scale + 1, c.row, c.col) += inv * (p1 - (label == 1));
      };
      for (std::size_t a : sel.positives) visit(a, 1);
      for (std::size_t a : sel.negatives) visit(a, 0);
    }
    term.grads.push_back(std::move(grad));
  }
  return term;
}

double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

LossTerm box_loss(std::span<const Tensor> box_deltas,
                  std::span<const std::vector<RegressionTarget>> targets,
                  std::span<const SelectedAnchors> selections) {
  if (box_deltas.size() != targets.size() ||
      box_deltas.size() != selections.size()) {
    throw ShapeError("box_loss: per-detector inputs differ in length");
  }
  LossTerm term;
  std::size_t total_pos = 0;
  for (std::size_t m = 0; m < box_deltas.size(); ++m) {
    const Tensor& deltas = box_deltas[m];
    require_single_image(deltas, "box_loss");
    Tensor grad(deltas.shape());
    const SelectedAnchors& sel = selections[m];
    total_pos += sel.positives.size();
    if (!sel.positives.empty()) {
      const double inv = 1.0 / static_cast<double>(sel.positives.size());
      for (std::size_t a : sel.positives) {
        if (a >= targets[m].size()) {
          throw ShapeError(detail::concat("box_loss: no target for anchor ", a,
                                          " of detector ", m + 1));
        }
        const RegressionTarget& t = targets[m][a];
        const std::array<double, 4> goal{t.tx, t.ty, t.tw, t.th};
        const AnchorCell c = anchor_cell(a, deltas.h(), deltas.w());
        for (int k = 0; k < 4; ++k) {
          const int ch = 4 * c.scale + k;
          const double r = deltas.at(0, ch, c.row, c.col) -
                           goal[static_cast<std::size_t>(k)];
          term.value += inv * smooth_l1(r);
          grad.at(0, ch, c.row, c.col) += inv * smooth_l1_grad(r);
          note_kink_decision(std::abs(r) < 1.0 ? 3 : 4);
        }
      }
    }
    term.grads.push_back(std::move(grad));
  }
  term.no_positives = total_pos == 0;
  return term;
}

double total_loss(double cls, double box, double den,
                  const LossWeights& weights) {
  weights.validate();
  if (!std::isfinite(cls)) throw ValueError(detail::concat("non-finite L_cls = ", cls));
  if (!std::isfinite(box)) throw ValueError(detail::concat("non-finite L_box = ", box));
  if (!std::isfinite(den)) throw ValueError(detail::concat("non-finite L_den = ", den));
  return cls + weights.lambda_b * box + weights.lambda_d * den;
}

void SgdConfig::validate() const {
  if (!(base_lr > 0.0) || !(momentum >= 0.0 && momentum < 1.0) ||
      !(weight_decay >= 0.0) || !(gamma > 0.0)) {
    throw ValueError(detail::concat("invalid optimizer settings: base_lr=",
                                    base_lr, " momentum=", momentum,
                                    " weight_decay=", weight_decay,
                                    " gamma=", gamma));
  }
  if (!std::is_sorted(milestones.begin(), milestones.end())) {
    throw ValueError("optimizer milestones must be ascending");
  }
}

double SgdConfig::learning_rate(int iteration) const {
  double lr = base_lr;
  for (int m : milestones) {
    if (iteration >= m) lr *= gamma;
  }
  return lr;
}

void sgd_step(std::span<const ParamRef> params, OptimizerState& state) {
  if (state.velocity.empty()) {
    for (const ParamRef& p : params) {
      state.velocity.emplace_back(p.value.size(), 0.0);
    }
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: optimizer state tracks a different parameter set");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    if (state.velocity[k].size() != p.value.size() ||
        p.grad.size() != p.value.size()) {
      throw ShapeError("sgd_step: shape mismatch for " + p.name);
    }
    for (double g : p.grad) {
      if (!std::isfinite(g)) {
        throw ValueError("sgd_step: non-finite gradient in " + p.name);
      }
    }
  }
  const SgdConfig& c = state.config;
  const double lr = c.learning_rate(state.iteration);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    std::vector<double>& v = state.velocity[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = c.momentum * v[i] + p.grad[i] + c.weight_decay * p.value[i];
      p.value[i] -= lr * v[i];
    }
  }
  ++state.iteration;
}

}  // namespace dafe
