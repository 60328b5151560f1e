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

#include "dafe/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "dafe/error.hpp"

namespace dafe {

Sample make_sample(std::string name, const Tensor& image,
                   std::vector<Box> faces, const GaussianSpec& gaussian) {
  if (image.n() != 1) throw ShapeError("make_sample: expects a single image");
  Sample s;
  s.name = std::move(name);
  s.width = image.w();
  s.height = image.h();
  s.image = pad_to_multiple(image, kInputMultiple);
  s.faces = std::move(faces);
  std::vector<FacePoint> points;
  points.reserve(s.faces.size());
  for (const Box& b : s.faces) {
    points.push_back({b.cx(), b.cy(), b.width(), b.height()});
  }
  s.density = generate_gt_density(points, s.image.w(), s.image.h(), 4, gaussian);
  return s;
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ValueError("train: iterations must be >= 1");
  weights.validate();
  sgd.validate();
  if (ohem.budget < 1) throw ValueError("train: ohem budget must be >= 1");
  if (!(ohem.max_pos_fraction >= 0.0 && ohem.max_pos_fraction <= 1.0)) {
    throw ValueError("train: ohem max_pos_fraction must be in [0, 1]");
  }
  if (!(match.negative_iou <= match.positive_iou)) {
    throw ValueError("train: negative_iou must not exceed positive_iou");
  }
}

ImageTargets build_targets(std::span<const AnchorGrid> grids,
                           std::span<const Box> faces,
                           const MatchConfig& match) {
  ImageTargets t;
  std::vector<MatchResult> matches = match_all(grids, faces, match);
  for (std::size_t g = 0; g < grids.size(); ++g) {
    const AnchorGrid& grid = grids[g];
    MatchResult& m = matches[g];
    std::vector<RegressionTarget> reg(grid.anchors.size());
    for (std::size_t a = 0; a < grid.anchors.size(); ++a) {
      if (m.labels[a] == AnchorLabel::positive) {
        reg[a] = encode(grid.anchors[a],
                        faces[static_cast<std::size_t>(m.matched_gt[a])]);
      }
    }
    t.matches.push_back(std::move(m));
    t.targets.push_back(std::move(reg));
  }
  return t;
}

StepLosses compute_losses(const NetworkOutput& out, const ImageTargets& targets,
                          const Tensor* density_target,
                          const TrainConfig& config) {
  std::vector<Tensor> logits;
  std::vector<Tensor> deltas;
  std::vector<SelectedAnchors> selections;
  for (std::size_t m = 0; m < kNumDetectors; ++m) {
    logits.push_back(out.heads[m].cls_logits);
    deltas.push_back(out.heads[m].box_deltas);
    const std::vector<double> scores = face_probabilities(logits.back());
    selections.push_back(ohem_select(scores, targets.matches[m],
                                     config.ohem.budget,
                                     config.ohem.max_pos_fraction));
  }
  LossTerm cls = cls_loss(logits, targets.matches, selections);
  LossTerm box = box_loss(deltas, targets.targets, selections);

  StepLosses s;
  s.cls = cls.value;
  s.box = box.value;
  const double lb = config.weights.lambda_b;
  const double ld = config.weights.lambda_d;
  if (ld > 0.0 && density_target != nullptr && !out.density.empty()) {
    DensityLoss den = density_loss(out.density, *density_target,
                                   config.density_norm);
    s.den = den.value;
    s.grads.density = std::move(den.grad);
    for (double& g : s.grads.density.data()) g *= ld;
  }
  s.total = total_loss(s.cls, s.box, s.den, config.weights);
  for (std::size_t m = 0; m < kNumDetectors; ++m) {
    s.grads.cls[m] = std::move(cls.grads[m]);
    s.grads.box[m] = std::move(box.grads[m]);
    for (double& g : s.grads.box[m].data()) g *= lb;
  }
  return s;
}

namespace {

Tensor flip_horizontal(const Tensor& t) {
  Tensor out(t.shape());
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < t.h(); ++y) {
        for (int x = 0; x < t.w(); ++x) {
          out.at(n, c, y, x) = t.at(n, c, y, t.w() - 1 - x);
        }
      }
    }
  }
  return out;
}

struct PreparedSample {
  Tensor image;
  Tensor density;
  ImageTargets targets;
};

PreparedSample prepare(const Sample& s, const NetworkConfig& net,
                       const MatchConfig& match, bool flipped) {
  PreparedSample p;
  const auto grids = tile_all(net.anchors, s.image.w(), s.image.h());
  if (!flipped) {
    p.image = s.image;
    p.density = s.density.to_tensor();
    p.targets = build_targets(grids, s.faces, match);
    return p;
  }
  // Mirror about the padded width so density cells stay aligned.
  const double w = s.image.w();
  std::vector<Box> faces;
  for (const Box& b : s.faces) faces.push_back({w - b.x2, b.y1, w - b.x1, b.y2});
  p.image = flip_horizontal(s.image);
  p.density = flip_horizontal(s.density.to_tensor());
  p.targets = build_targets(grids, faces, match);
  return p;
}

}  // namespace

TrainResult train(Network& network, std::span<const Sample> dataset,
                  const TrainConfig& config, const CheckpointFn& on_checkpoint) {
  if (dataset.empty()) throw ValueError("train: empty dataset");
  config.validate();
  if (config.weights.lambda_d > 0.0 && !network.config().has_dem()) {
    throw ValueError("train: lambda_d > 0 needs a density estimator "
                     "(fusion != none)");
  }

  // Matching is fixed per image, so it is computed once up front.
  std::vector<PreparedSample> prepared;
  std::vector<PreparedSample> prepared_flipped;
  for (const Sample& s : dataset) {
    prepared.push_back(prepare(s, network.config(), config.match, false));
    if (config.hflip) {
      prepared_flipped.push_back(prepare(s, network.config(), config.match, true));
    }
  }

  TrainResult result;
  result.density_loss_evaluated = config.weights.lambda_d > 0.0;
  OptimizerState state;
  state.config = config.sgd;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::bernoulli_distribution coin(0.5);

  for (int it = 1; it <= config.iterations; ++it) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t idx = order[cursor++];
    const bool flip = config.hflip && coin(rng);
    const PreparedSample& sample = flip ? prepared_flipped[idx] : prepared[idx];

    const NetworkOutput out = network.forward(sample.image);
    const StepLosses losses = compute_losses(
        out, sample.targets,
        result.density_loss_evaluated ? &sample.density : nullptr, config);

    network.zero_grad();
    network.backward(losses.grads);
    const double lr = config.sgd.learning_rate(state.iteration);
    const std::vector<ParamRef> params = network.parameters();
    sgd_step(params, state);

    result.trace.push_back(
        {it, losses.cls, losses.box, losses.den, losses.total, lr});
    if (on_checkpoint &&
        (it == config.iterations ||
         std::find(config.checkpoints.begin(), config.checkpoints.end(), it) !=
             config.checkpoints.end())) {
      on_checkpoint(it, network);
    }
  }
  return result;
}

void write_trace_csv(std::span<const TraceRow> trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss trace " + path);
  out << "iter,L_cls,L_box,L_den,lr\n";
  char line[160];
  for (const TraceRow& r : trace) {
    std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g,%.6g\n", r.iteration,
                  r.cls, r.box, r.den, r.lr);
    out << line;
  }
  if (!out) throw IoError("failed writing loss trace " + path);
}

}  // namespace dafe
