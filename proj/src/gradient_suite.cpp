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

#include "dafe/gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <random>

#include "dafe/density.hpp"
#include "dafe/error.hpp"
#include "dafe/layers.hpp"
#include "dafe/loss.hpp"
#include "dafe/network.hpp"
#include "dafe/train.hpp"

namespace dafe {

namespace {

using Rng = std::mt19937_64;

constexpr int kMaxDraws = 100;

Tensor randn(const Shape& s, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double dot(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("gradient suite: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Zero biases on top of dead channels put pre-activations exactly on the
// relu kink; random biases move them off it.
template <typename Module>
void randomize_biases(Module& m, Rng& rng) {
  std::vector<ParamRef> params;
  m.collect(params);
  std::normal_distribution<double> d(0.0, 0.5);
  for (const ParamRef& p : params) {
    if (p.name.size() > 5 && p.name.ends_with(".bias")) {
      for (double& v : p.value) v = d(rng);
    }
  }
}

// Analytic gradients are copied out so that later forward passes inside
// the loss closure cannot disturb them.
struct Checked {
  std::vector<std::string> names;
  std::vector<std::span<double>> values;
  std::vector<std::vector<double>> analytic;

  void add(std::string name, std::span<double> v, std::span<const double> g) {
    names.push_back(std::move(name));
    values.push_back(v);
    analytic.emplace_back(g.begin(), g.end());
  }
  void add_params(std::vector<ParamRef> params) {
    for (const ParamRef& p : params) add(p.name, p.value, p.grad);
  }

  // nullopt when some perturbed evaluation left the smooth piece of the
  // unperturbed point (a relu, max-pool, selection or smooth-L1 kink lies
  // inside the difference stencil); the caller then redraws.
  std::optional<GradCheckResult> run(const std::function<double()>& loss,
                                     const GradCheckOptions& options) const {
    KinkMonitor monitor;
    loss();
    const std::uint64_t base = monitor.fingerprint();
    bool crossed = false;
    auto guarded = [&] {
      monitor.reset();
      const double v = loss();
      crossed = crossed || monitor.fingerprint() != base;
      return v;
    };
    std::vector<GradCheckParam> params;
    for (std::size_t i = 0; i < names.size(); ++i) {
      params.push_back({names[i], values[i], analytic[i]});
    }
    GradCheckResult r = grad_check(guarded, params, options);
    if (crossed) return std::nullopt;
    return r;
  }
};

// Deep compositions use a wider stencil: their smallest gradient entries
// are otherwise swamped by rounding in the loss.
GradCheckOptions options_for(std::uint64_t seed, std::size_t max_entries = 0,
                             double eps = 1e-6) {
  GradCheckOptions o;
  o.eps = eps;
  o.max_entries_per_param = max_entries;
  o.seed = seed;
  return o;
}

std::optional<GradCheckResult> check_conv(Rng& rng, std::uint64_t seed) {
  const int kernel = uniform_int(rng, 0, 1) ? 3 : 1;
  const int stride = uniform_int(rng, 1, 2);
  const int dilation = kernel == 3 ? uniform_int(rng, 1, 2) : 1;
  const int padding = uniform_int(rng, 0, 2);
  const int cin = uniform_int(rng, 1, 3);
  const int cout = uniform_int(rng, 1, 3);
  ConvSpec spec = ConvSpec::make(cin, cout, kernel, stride, padding, dilation);
  spec.weights = randn(spec.weights.shape(), rng);
  for (double& b : spec.bias) b = std::normal_distribution<double>()(rng);
  Tensor x = randn(Shape{2, cin, uniform_int(rng, 5, 8), uniform_int(rng, 5, 8)}, rng);
  const Tensor w = randn(conv2d(x, spec).shape(), rng);
  const ConvGrads g = conv2d_backward(x, spec, w);
  Checked c;
  c.add("input", x.data(), g.input_grad.data());
  c.add("weight", spec.weights.data(), g.weight_grad.data());
  c.add("bias", spec.bias, g.bias_grad);
  return c.run([&] { return dot(w, conv2d(x, spec)); }, options_for(seed));
}

std::optional<GradCheckResult> check_maxpool(Rng& rng, std::uint64_t seed) {
  Tensor x = randn(Shape{2, 2, uniform_int(rng, 3, 7), uniform_int(rng, 3, 7)}, rng);
  const Tensor w = randn(maxpool2(x).shape(), rng);
  Checked c;
  c.add("input", x.data(), maxpool2_backward(x, w).data());
  return c.run([&] { return dot(w, maxpool2(x)); }, options_for(seed));
}

std::optional<GradCheckResult> check_bilinear(Rng& rng, std::uint64_t seed) {
  const int h = uniform_int(rng, 1, 5);
  const int wd = uniform_int(rng, 1, 5);
  const int oh = h + uniform_int(rng, 0, 6);
  const int ow = wd + uniform_int(rng, 0, 6);
  Tensor x = randn(Shape{1, 2, h, wd}, rng);
  const Tensor w = randn(Shape{1, 2, oh, ow}, rng);
  Checked c;
  c.add("input", x.data(), bilinear_upsample_backward(w, h, wd).data());
  return c.run([&] { return dot(w, bilinear_upsample(x, oh, ow)); },
               options_for(seed));
}

std::optional<GradCheckResult> check_concat(Rng& rng, std::uint64_t seed) {
  const int h = uniform_int(rng, 1, 4);
  const int wd = uniform_int(rng, 1, 4);
  const std::vector<int> channels{uniform_int(rng, 1, 3), uniform_int(rng, 1, 3),
                                  uniform_int(rng, 1, 3)};
  std::vector<Tensor> xs;
  for (int ch : channels) xs.push_back(randn(Shape{2, ch, h, wd}, rng));
  auto fwd = [&] { return concat_channels({&xs[0], &xs[1], &xs[2]}); };
  const Tensor w = randn(fwd().shape(), rng);
  const std::vector<Tensor> g = concat_channels_backward(w, channels);
  Checked c;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    c.add("input" + std::to_string(k), xs[k].data(), g[k].data());
  }
  return c.run([&] { return dot(w, fwd()); }, options_for(seed));
}

std::optional<GradCheckResult> check_relu(Rng& rng, std::uint64_t seed) {
  Tensor x = randn(Shape{2, 3, 4, 5}, rng);
  const Tensor w = randn(x.shape(), rng);
  Checked c;
  c.add("input", x.data(), relu_backward(x, w).data());
  return c.run([&] { return dot(w, relu(x)); }, options_for(seed));
}

std::optional<GradCheckResult> check_add(Rng& rng, std::uint64_t seed) {
  Tensor a = randn(Shape{1, 2, 3, 4}, rng);
  Tensor b = randn(a.shape(), rng);
  const Tensor w = randn(a.shape(), rng);
  Checked c;
  c.add("a", a.data(), w.data());
  c.add("b", b.data(), w.data());
  return c.run([&] { return dot(w, add(a, b)); }, options_for(seed));
}

std::optional<GradCheckResult> check_scale_add(Rng& rng, std::uint64_t seed) {
  Tensor a = randn(Shape{1, 2, 3, 4}, rng);
  Tensor b = randn(a.shape(), rng);
  double alpha = std::normal_distribution<double>()(rng);
  const Tensor w = randn(a.shape(), rng);
  Tensor gb = w;
  for (double& v : gb.values()) v *= alpha;
  const double galpha = dot(w, b);
  Checked c;
  c.add("a", a.data(), w.data());
  c.add("b", b.data(), gb.data());
  c.add("alpha", std::span<double>(&alpha, 1), std::span<const double>(&galpha, 1));
  return c.run([&] { return dot(w, scale_add(a, b, alpha)); }, options_for(seed));
}

std::optional<GradCheckResult> check_fem(Rng& rng, std::uint64_t seed) {
  const int h = uniform_int(rng, 2, 5);
  const int wd = uniform_int(rng, 2, 5);
  Tensor f3 = randn(Shape{1, 3, h, wd}, rng);
  Tensor density = randn(Shape{1, 1, h, wd}, rng);
  double alpha = std::normal_distribution<double>()(rng);
  const Tensor w = randn(f3.shape(), rng);
  const FemGrads g = fem_enrich_backward(w, density, alpha);
  Checked c;
  c.add("f3", f3.data(), g.f3.data());
  c.add("density", density.data(), g.density.data());
  c.add("alpha", std::span<double>(&alpha, 1), std::span<const double>(&g.alpha, 1));
  return c.run([&] { return dot(w, fem_enrich(f3, density, alpha)); },
               options_for(seed));
}

std::optional<GradCheckResult> check_dem(Rng& rng, std::uint64_t seed) {
  const int h3 = uniform_int(rng, 2, 3);
  const int w3 = uniform_int(rng, 2, 3);
  const std::array<int, 3> ch{2, 2, 3};
  DemConfig cfg;
  cfg.reduce_width = 2;
  DensityEstimator dem("dem", ch, cfg);
  dem.init(rng);
  randomize_biases(dem, rng);
  Tensor t1 = randn(Shape{1, ch[0], 4 * h3, 4 * w3}, rng);
  Tensor t2 = randn(Shape{1, ch[1], 2 * h3, 2 * w3}, rng);
  Tensor t3 = randn(Shape{1, ch[2], h3, w3}, rng);
  const Tensor wd = randn(dem.forward(t1, t2, t3).shape(), rng);
  const Tensor wf = randn(dem.features().shape(), rng);
  dem.zero_grad();
  const auto g = dem.backward(wd, &wf);
  Checked c;
  std::vector<ParamRef> params;
  dem.collect(params);
  c.add_params(params);
  c.add("tap1", t1.data(), g.tap1.data());
  c.add("tap2", t2.data(), g.tap2.data());
  c.add("tap3", t3.data(), g.tap3.data());
  return c.run(
      [&] {
        const double d = dot(wd, dem.forward(t1, t2, t3));
        return d + dot(wf, dem.features());
      },
      options_for(seed));
}

std::optional<GradCheckResult> check_ffm(Rng& rng, std::uint64_t seed) {
  const int h = uniform_int(rng, 2, 6);
  const int wd = uniform_int(rng, 2, 6);
  FeatureFusion ffm("ffm", 2, 3, 3, uniform_int(rng, 0, 1) == 1);
  ffm.init(rng);
  randomize_biases(ffm, rng);
  Tensor lo = randn(Shape{1, 2, h, wd}, rng);
  Tensor hi = randn(Shape{1, 3, (h + 1) / 2, (wd + 1) / 2}, rng);
  const Tensor w = randn(ffm.forward(lo, hi).shape(), rng);
  ffm.zero_grad();
  const auto [glo, ghi] = ffm.backward(w);
  Checked c;
  std::vector<ParamRef> params;
  ffm.collect(params);
  c.add_params(params);
  c.add("lo", lo.data(), glo.data());
  c.add("hi", hi.data(), ghi.data());
  return c.run([&] { return dot(w, ffm.forward(lo, hi)); }, options_for(seed));
}

std::optional<GradCheckResult> check_cam(Rng& rng, std::uint64_t seed) {
  CamConfig cfg;
  cfg.residual = uniform_int(rng, 0, 1) == 1;
  ContextModule cam("cam", 3, cfg);
  cam.init(rng);
  randomize_biases(cam, rng);
  Tensor x = randn(Shape{1, 3, uniform_int(rng, 3, 6), uniform_int(rng, 3, 6)}, rng);
  const Tensor w = randn(cam.forward(x).shape(), rng);
  cam.zero_grad();
  const Tensor gx = cam.backward(w);
  Checked c;
  std::vector<ParamRef> params;
  cam.collect(params);
  c.add_params(params);
  c.add("input", x.data(), gx.data());
  return c.run([&] { return dot(w, cam.forward(x)); }, options_for(seed));
}

std::optional<GradCheckResult> check_head(Rng& rng, std::uint64_t seed) {
  CamConfig cam;
  cam.enabled = uniform_int(rng, 0, 1) == 1;
  DetectorHead head("head", 3, 2, cam);
  head.init(rng, 0.01);
  randomize_biases(head, rng);
  Tensor x = randn(Shape{1, 3, uniform_int(rng, 2, 5), uniform_int(rng, 2, 5)}, rng);
  const DetectorOutput out = head.forward(x);
  const Tensor wc = randn(out.cls_logits.shape(), rng);
  const Tensor wb = randn(out.box_deltas.shape(), rng);
  head.zero_grad();
  const Tensor gx = head.backward(wc, wb);
  Checked c;
  std::vector<ParamRef> params;
  head.collect(params);
  c.add_params(params);
  c.add("input", x.data(), gx.data());
  return c.run(
      [&] {
        const DetectorOutput o = head.forward(x);
        return dot(wc, o.cls_logits) + dot(wb, o.box_deltas);
      },
      options_for(seed));
}

std::optional<GradCheckResult> check_backbone(Rng& rng, std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.widths = {2, 2, 3, 3, 2};
  cfg.convs_per_block = uniform_int(rng, 1, 2);
  Backbone bb(cfg);
  bb.init(rng);
  randomize_biases(bb, rng);
  Tensor x = randn(Shape{1, 1, 32, 32}, rng);
  const BackboneTaps t = bb.forward(x);
  BackboneTaps w{randn(t.conv1.shape(), rng), randn(t.conv2.shape(), rng),
                 randn(t.conv3.shape(), rng), randn(t.conv4.shape(), rng),
                 randn(t.conv5.shape(), rng), randn(t.conv5_pooled.shape(), rng)};
  bb.zero_grad();
  bb.backward(w);
  Checked c;
  std::vector<ParamRef> params;
  bb.collect(params);
  c.add_params(params);
  return c.run(
      [&] {
        const BackboneTaps o = bb.forward(x);
        return dot(w.conv1, o.conv1) + dot(w.conv2, o.conv2) +
               dot(w.conv3, o.conv3) + dot(w.conv4, o.conv4) +
               dot(w.conv5, o.conv5) + dot(w.conv5_pooled, o.conv5_pooled);
      },
      options_for(seed, 12, 1e-4));
}

std::optional<GradCheckResult> check_density_loss(Rng& rng, std::uint64_t seed, DensityLossNorm norm) {
  const Shape s{2, 1, uniform_int(rng, 2, 6), uniform_int(rng, 2, 6)};
  Tensor pred = randn(s, rng);
  const Tensor target = randn(s, rng);
  Checked c;
  c.add("predicted", pred.data(), density_loss(pred, target, norm).grad.data());
  return c.run([&] { return density_loss(pred, target, norm).value; },
               options_for(seed));
}

// Random anchors/labels on two small detectors with a fixed selection.
struct HeadFixture {
  std::vector<MatchResult> matches;
  std::vector<SelectedAnchors> selections;
  std::vector<std::vector<RegressionTarget>> targets;
  std::vector<Tensor> cls;
  std::vector<Tensor> box;
};

HeadFixture make_head_fixture(Rng& rng) {
  HeadFixture f;
  for (int m = 0; m < 2; ++m) {
    const int s = uniform_int(rng, 1, 2);
    const int h = uniform_int(rng, 2, 4);
    const int w = uniform_int(rng, 2, 4);
    const std::size_t n = static_cast<std::size_t>(s * h * w);
    f.cls.push_back(randn(Shape{1, 2 * s, h, w}, rng));
    f.box.push_back(randn(Shape{1, 4 * s, h, w}, rng, 0.3));
    MatchResult mr;
    SelectedAnchors sel;
    std::vector<RegressionTarget> t(n);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (std::size_t a = 0; a < n; ++a) {
      const int r = uniform_int(rng, 0, 2);
      const AnchorLabel label = r == 0   ? AnchorLabel::positive
                                : r == 1 ? AnchorLabel::negative
                                         : AnchorLabel::ignore;
      mr.labels.push_back(label);
      mr.matched_gt.push_back(label == AnchorLabel::positive ? 0 : -1);
      mr.max_iou.push_back(0.0);
      if (label == AnchorLabel::positive) {
        sel.positives.push_back(a);
        t[a] = {nd(rng), nd(rng), nd(rng), nd(rng)};
      } else if (label == AnchorLabel::negative) {
        sel.negatives.push_back(a);
      }
    }
    f.matches.push_back(std::move(mr));
    f.selections.push_back(std::move(sel));
    f.targets.push_back(std::move(t));
  }
  return f;
}

std::optional<GradCheckResult> check_cls_loss(Rng& rng, std::uint64_t seed) {
  HeadFixture f = make_head_fixture(rng);
  const LossTerm l = cls_loss(f.cls, f.matches, f.selections);
  Checked c;
  for (std::size_t m = 0; m < f.cls.size(); ++m) {
    c.add("logits" + std::to_string(m), f.cls[m].data(), l.grads[m].data());
  }
  return c.run([&] { return cls_loss(f.cls, f.matches, f.selections).value; },
               options_for(seed));
}

std::optional<GradCheckResult> check_box_loss(Rng& rng, std::uint64_t seed) {
  HeadFixture f = make_head_fixture(rng);
  const LossTerm l = box_loss(f.box, f.targets, f.selections);
  Checked c;
  for (std::size_t m = 0; m < f.box.size(); ++m) {
    c.add("deltas" + std::to_string(m), f.box[m].data(), l.grads[m].data());
  }
  return c.run([&] { return box_loss(f.box, f.targets, f.selections).value; },
               options_for(seed));
}

std::optional<GradCheckResult> check_network(Rng& rng, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.backbone.widths = {2, 3, 3, 4, 4};
  cfg.backbone.convs_per_block = 1;
  cfg.ffm_channels = 4;
  cfg.dem.reduce_width = 2;
  cfg.cam.dilations = {1, 2};
  cfg.cam.enabled = uniform_int(rng, 0, 3) != 0;
  const DemFusion fusions[] = {DemFusion::fem, DemFusion::add, DemFusion::concat};
  cfg.fusion = fusions[uniform_int(rng, 0, 2)];
  Network net(cfg);
  net.init(rng());
  {
    std::normal_distribution<double> d(0.0, 0.5);
    for (const ParamRef& p : net.parameters()) {
      if (p.name.ends_with(".bias")) {
        for (double& v : p.value) v = d(rng);
      }
    }
  }
  // Non-trivial alpha so the density path carries gradient.
  net.alpha().value = 0.5;

  const int size = 64;
  Tensor image = randn(Shape{1, 1, size, size}, rng, 0.5);
  std::vector<Box> faces;
  std::vector<FacePoint> points;
  const int count = uniform_int(rng, 1, 3);
  for (int k = 0; k < count; ++k) {
    const double side = std::uniform_real_distribution<double>(8.0, 40.0)(rng);
    const double x = std::uniform_real_distribution<double>(0.0, size - side)(rng);
    const double y = std::uniform_real_distribution<double>(0.0, size - side)(rng);
    faces.push_back(Box{x, y, x + side, y + side});
    points.push_back({x + side / 2, y + side / 2, side, side});
  }
  const Tensor density_target =
      generate_gt_density(points, size, size, 4, GaussianSpec{}).to_tensor();
  const auto grids = tile_all(cfg.anchors, size, size);
  TrainConfig tc;
  tc.weights.lambda_b = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  tc.weights.lambda_d = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  tc.density_norm = uniform_int(rng, 0, 1) ? DensityLossNorm::l2
                                           : DensityLossNorm::squared_mean;
  tc.ohem.budget = 16;
  const ImageTargets targets = build_targets(grids, faces, tc.match);

  auto loss = [&] {
    return compute_losses(net.forward(image), targets, &density_target, tc).total;
  };
  const StepLosses step = compute_losses(net.forward(image), targets,
                                         &density_target, tc);
  net.zero_grad();
  net.backward(step.grads);
  Checked c;
  c.add_params(net.parameters());
  return c.run(loss, options_for(seed, 6, 1e-4));
}

using CheckFn =
    std::function<std::optional<GradCheckResult>(Rng&, std::uint64_t)>;

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  static const std::vector<std::pair<std::string, CheckFn>> r{
      {"conv2d", check_conv},
      {"maxpool2", check_maxpool},
      {"bilinear_upsample", check_bilinear},
      {"concat_channels", check_concat},
      {"relu", check_relu},
      {"add", check_add},
      {"scale_add", check_scale_add},
      {"fem", check_fem},
      {"dem", check_dem},
      {"ffm", check_ffm},
      {"cam", check_cam},
      {"detector_head", check_head},
      {"backbone", check_backbone},
      {"density_loss_squared_mean",
       [](Rng& r, std::uint64_t s) {
         return check_density_loss(r, s, DensityLossNorm::squared_mean);
       }},
      {"density_loss_l2",
       [](Rng& r, std::uint64_t s) {
         return check_density_loss(r, s, DensityLossNorm::l2);
       }},
      {"cls_loss", check_cls_loss},
      {"box_loss", check_box_loss},
      {"network", check_network},
  };
  return r;
}

// Draws from one seeded stream until a kink-free point is found.
GradCheckResult run_check(const std::string& name, const CheckFn& fn,
                          std::uint64_t seed, int* draws = nullptr) {
  Rng rng(seed);
  for (int k = 0; k < kMaxDraws; ++k) {
    if (auto r = fn(rng, seed)) {
      if (draws) *draws = k + 1;
      return *r;
    }
  }
  throw ValueError(detail::concat("gradient check ", name, " seed ", seed,
                                  ": no kink-free draw in ", kMaxDraws,
                                  " attempts"));
}

}  // namespace

const std::vector<std::string>& gradient_suite_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : registry()) n.push_back(name);
    return n;
  }();
  return names;
}

GradCheckResult check_op_gradients(const std::string& op, std::uint64_t seed) {
  for (const auto& [name, fn] : registry()) {
    if (name == op) return run_check(name, fn, seed);
  }
  throw ValueError("unknown gradient check '" + op + "'");
}

GradSuiteReport run_gradient_suite(std::span<const std::uint64_t> seeds,
                                   double tolerance) {
  GradSuiteReport report;
  for (const auto& [name, fn] : registry()) {
    for (std::uint64_t seed : seeds) {
      GradSuiteEntry e;
      e.op = name;
      e.seed = seed;
      e.result = run_check(name, fn, seed, &e.draws);
      e.passed = e.result.max_relative_error < tolerance;
      report.max_error = std::max(report.max_error, e.result.max_relative_error);
      report.passed = report.passed && e.passed;
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

}  // namespace dafe
