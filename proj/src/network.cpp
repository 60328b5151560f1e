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

#include "dafe/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dafe/error.hpp"

namespace dafe {

namespace {

void accumulate(Tensor& acc, const Tensor& g) {
  if (g.empty()) return;
  if (acc.empty()) {
    acc = g;
  } else {
    add_inplace(acc, g);
  }
}

Tensor zeros_like_or(const Tensor& g, const Shape& shape) {
  return g.empty() ? Tensor(shape) : g;
}

}  // namespace

const char* to_string(DemFusion f) {
  switch (f) {
    case DemFusion::none:
      return "none";
    case DemFusion::add:
      return "add";
    case DemFusion::concat:
      return "concat";
    case DemFusion::fem:
      return "fem";
  }
  return "?";
}

DemFusion parse_dem_fusion(const std::string& s) {
  if (s == "none") return DemFusion::none;
  if (s == "add") return DemFusion::add;
  if (s == "concat") return DemFusion::concat;
  if (s == "fem") return DemFusion::fem;
  throw ValueError("unknown DEM fusion '" + s +
                   "' (expected none, add, concat or fem)");
}

void NetworkConfig::validate() const {
  if (backbone.in_channels < 1 || backbone.convs_per_block < 1) {
    throw ValueError("backbone: in_channels and convs_per_block must be >= 1");
  }
  for (int w : backbone.widths) {
    if (w < 1) throw ValueError("backbone: block widths must be >= 1");
  }
  if (ffm_channels < 1) throw ValueError("ffm_channels must be >= 1");
  if (cam.enabled) {
    if (cam.dilations.empty()) throw ValueError("cam: no dilations");
    std::set<int> seen;
    for (int d : cam.dilations) {
      if (d < 1) throw ValueError("cam: dilations must be >= 1");
      if (!seen.insert(d).second) {
        throw ValueError("cam: dilations must be distinct");
      }
    }
    if (cam.branch_width < 0) throw ValueError("cam: branch_width < 0");
  }
  if (dem.reduce_width < 1) throw ValueError("dem: reduce_width must be >= 1");
  if (!std::isfinite(alpha_init)) throw ValueError("alpha_init not finite");
  if (!(cls_prior > 0.0 && cls_prior < 1.0)) {
    throw ValueError("cls_prior must be in (0, 1)");
  }
  if (anchors.detectors.size() != kNumDetectors) {
    throw ValueError("anchor table must have exactly 4 detectors");
  }
  const auto strides = Network::detector_strides();
  for (std::size_t m = 0; m < kNumDetectors; ++m) {
    if (anchors.detectors[m].stride != strides[m]) {
      throw ValueError(detail::concat("anchor detector ", m + 1, " stride ",
                                      anchors.detectors[m].stride,
                                      " does not match wiring stride ",
                                      strides[m]));
    }
    if (anchors.detectors[m].scales.empty()) {
      throw ValueError(detail::concat("anchor detector ", m + 1,
                                      " has no scales"));
    }
  }
  if (!(anchors.base_size > 0.0)) throw ValueError("anchor base_size <= 0");
}

// ---------------------------------------------------------------- backbone

Backbone::Backbone(const BackboneConfig& config) : config_(config) {
  int in = config_.in_channels;
  for (int b = 0; b < 5; ++b) {
    const int width = config_.widths[static_cast<std::size_t>(b)];
    for (int k = 0; k < config_.convs_per_block; ++k) {
      blocks_[b].convs.emplace_back(
          detail::concat("backbone.block", b + 1, ".conv", k + 1), in, width,
          3, 1, 1);
      in = width;
    }
  }
}

BackboneTaps Backbone::forward(const Tensor& image) {
  Tensor x = image;
  for (int b = 0; b < 5; ++b) {
    Block& block = blocks_[b];
    if (b > 0) x = maxpool2(outputs_[b - 1]);
    block.input = x;
    block.pre.resize(block.convs.size());
    for (std::size_t k = 0; k < block.convs.size(); ++k) {
      block.pre[k] = block.convs[k].forward(x);
      x = relu(block.pre[k]);
    }
    outputs_[b] = x;
  }
  BackboneTaps taps;
  taps.conv1 = outputs_[0];
  taps.conv2 = outputs_[1];
  taps.conv3 = outputs_[2];
  taps.conv4 = outputs_[3];
  taps.conv5 = outputs_[4];
  taps.conv5_pooled = maxpool2(outputs_[4]);
  return taps;
}

void Backbone::backward(const BackboneTaps& grads) {
  const std::array<const Tensor*, 5> tap_grads{&grads.conv1, &grads.conv2,
                                               &grads.conv3, &grads.conv4,
                                               &grads.conv5};
  Tensor g;
  if (!grads.conv5_pooled.empty()) {
    g = maxpool2_backward(outputs_[4], grads.conv5_pooled);
  }
  for (int b = 4; b >= 0; --b) {
    if (b < 4 && !g.empty()) g = maxpool2_backward(outputs_[b], g);
    accumulate(g, *tap_grads[static_cast<std::size_t>(b)]);
    if (g.empty()) continue;
    Block& block = blocks_[b];
    for (std::size_t k = block.convs.size(); k-- > 0;) {
      g = relu_backward(block.pre[k], g);
      const bool need_input = b > 0 || k > 0;
      g = block.convs[k].backward(g, need_input);
    }
  }
}

void Backbone::init(std::mt19937_64& rng) {
  for (Block& block : blocks_) {
    for (ConvLayer& c : block.convs) c.init_he(rng);
  }
}

void Backbone::collect(std::vector<ParamRef>& out) {
  for (Block& block : blocks_) {
    for (ConvLayer& c : block.convs) c.collect(out);
  }
}

void Backbone::zero_grad() {
  for (Block& block : blocks_) {
    for (ConvLayer& c : block.convs) c.zero_grad();
  }
}

// ------------------------------------------------------------------- FFM

FeatureFusion::FeatureFusion(const std::string& prefix, int lo_channels,
                             int hi_channels, int out_channels,
                             bool apply_relu)
    : lo_(prefix + ".lo", lo_channels, out_channels, 1),
      hi_(prefix + ".hi", hi_channels, out_channels, 1),
      apply_relu_(apply_relu) {}

Tensor FeatureFusion::forward(const Tensor& f_lo, const Tensor& f_hi) {
  if (f_lo.n() != f_hi.n() || f_hi.h() != (f_lo.h() + 1) / 2 ||
      f_hi.w() != (f_lo.w() + 1) / 2) {
    throw ShapeError("ffm: coarse input " + to_string(f_hi.shape()) +
                     " is not half the resolution of " +
                     to_string(f_lo.shape()));
  }
  hi_h_ = f_hi.h();
  hi_w_ = f_hi.w();
  sum_ = lo_.forward(f_lo);
  add_inplace(sum_, bilinear_upsample(hi_.forward(f_hi), f_lo.h(), f_lo.w()));
  return apply_relu_ ? relu(sum_) : sum_;
}

std::pair<Tensor, Tensor> FeatureFusion::backward(const Tensor& upstream) {
  const Tensor g = apply_relu_ ? relu_backward(sum_, upstream) : upstream;
  Tensor g_lo = lo_.backward(g);
  Tensor g_hi = hi_.backward(bilinear_upsample_backward(g, hi_h_, hi_w_));
  return {std::move(g_lo), std::move(g_hi)};
}

void FeatureFusion::init(std::mt19937_64& rng) {
  lo_.init_he(rng);
  hi_.init_he(rng);
}

void FeatureFusion::collect(std::vector<ParamRef>& out) {
  lo_.collect(out);
  hi_.collect(out);
}

void FeatureFusion::zero_grad() {
  lo_.zero_grad();
  hi_.zero_grad();
}

// ------------------------------------------------------------------- CAM

ContextModule::ContextModule(const std::string& prefix, int channels,
                             const CamConfig& config)
    : residual_(config.residual) {
  const int n = static_cast<int>(config.dilations.size());
  const int width =
      config.branch_width > 0 ? config.branch_width : (channels + n - 1) / n;
  for (int k = 0; k < n; ++k) {
    const int d = config.dilations[static_cast<std::size_t>(k)];
    branches_.emplace_back(detail::concat(prefix, ".branch", k + 1), channels,
                           width, 3, 1, d, d);
  }
  merge_ = ConvLayer(prefix + ".merge", n * width, channels, 1);
}

Tensor ContextModule::forward(const Tensor& f) {
  pre_.resize(branches_.size());
  std::vector<Tensor> acts(branches_.size());
  std::vector<const Tensor*> parts;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    pre_[k] = branches_[k].forward(f);
    acts[k] = relu(pre_[k]);
    parts.push_back(&acts[k]);
  }
  Tensor out = merge_.forward(concat_channels(parts));
  if (residual_) add_inplace(out, f);
  return out;
}

Tensor ContextModule::backward(const Tensor& upstream) {
  Tensor g_cat = merge_.backward(upstream);
  std::vector<int> widths;
  for (const ConvLayer& b : branches_) widths.push_back(b.spec().out_channels);
  std::vector<Tensor> g_parts = concat_channels_backward(g_cat, widths);
  Tensor g_in;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    accumulate(g_in, branches_[k].backward(relu_backward(pre_[k], g_parts[k])));
  }
  if (residual_) add_inplace(g_in, upstream);
  return g_in;
}

void ContextModule::init(std::mt19937_64& rng) {
  for (ConvLayer& b : branches_) b.init_he(rng);
  merge_.init_he(rng);
}

void ContextModule::collect(std::vector<ParamRef>& out) {
  for (ConvLayer& b : branches_) b.collect(out);
  merge_.collect(out);
}

void ContextModule::zero_grad() {
  for (ConvLayer& b : branches_) b.zero_grad();
  merge_.zero_grad();
}

// -------------------------------------------------------------- detectors

DetectorHead::DetectorHead(const std::string& prefix, int channels,
                           int num_scales, const CamConfig& cam)
    : num_scales_(num_scales),
      cls_(prefix + ".cls", channels, 2 * num_scales, 1),
      box_(prefix + ".box", channels, 4 * num_scales, 1) {
  if (cam.enabled) cam_.emplace(prefix + ".cam", channels, cam);
}

DetectorOutput DetectorHead::forward(const Tensor& f) {
  const Tensor features = cam_ ? cam_->forward(f) : f;
  return DetectorOutput{cls_.forward(features), box_.forward(features)};
}

Tensor DetectorHead::backward(const Tensor& cls_grad, const Tensor& box_grad) {
  Tensor g = cls_.backward(cls_grad);
  add_inplace(g, box_.backward(box_grad));
  return cam_ ? cam_->backward(g) : g;
}

void DetectorHead::init(std::mt19937_64& rng, double cls_prior) {
  if (cam_) cam_->init(rng);
  cls_.init_he(rng);
  box_.init_he(rng);
  const double face_bias = -std::log((1.0 - cls_prior) / cls_prior);
  for (int s = 0; s < num_scales_; ++s) {
    cls_.spec().bias[static_cast<std::size_t>(2 * s + 1)] = face_bias;
  }
}

void DetectorHead::collect(std::vector<ParamRef>& out) {
  if (cam_) cam_->collect(out);
  cls_.collect(out);
  box_.collect(out);
}

void DetectorHead::zero_grad() {
  if (cam_) cam_->zero_grad();
  cls_.zero_grad();
  box_.zero_grad();
}

// ------------------------------------------------------------------- FEM

Tensor fem_enrich(const Tensor& f3, const Tensor& density, double alpha) {
  const Shape s = f3.shape();
  const Shape d = density.shape();
  if (d.n != s.n || d.c != 1 || d.h != s.h || d.w != s.w) {
    throw ShapeError("fem: density " + to_string(d) +
                     " does not match feature map " + to_string(s));
  }
  Tensor out = f3;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const double* dens = density.data().data() + n * plane;
    for (int c = 0; c < s.c; ++c) {
      double* dst = out.data().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += alpha * dens[i];
    }
  }
  return out;
}

FemGrads fem_enrich_backward(const Tensor& upstream, const Tensor& density,
                             double alpha) {
  const Shape s = upstream.shape();
  const Shape d = density.shape();
  if (d.n != s.n || d.c != 1 || d.h != s.h || d.w != s.w) {
    throw ShapeError("fem backward: density " + to_string(d) +
                     " does not match upstream " + to_string(s));
  }
  FemGrads g;
  g.f3 = upstream;
  g.density = Tensor(d);
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const double* dens = density.data().data() + n * plane;
    double* gd = g.density.data().data() + n * plane;
    for (int c = 0; c < s.c; ++c) {
      const double* up =
          upstream.data().data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        gd[i] += alpha * up[i];
        g.alpha += up[i] * dens[i];
      }
    }
  }
  return g;
}

// --------------------------------------------------------------- network

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& w = config_.backbone.widths;
  backbone_ = Backbone(config_.backbone);
  int d1_channels = w[2];
  if (config_.has_dem()) {
    dem_ = DensityEstimator("dem", {w[0], w[1], w[2]}, config_.dem);
    if (config_.fusion == DemFusion::add || config_.fusion == DemFusion::concat) {
      fusion_expand_ =
          ConvLayer("fusion.expand", dem_.feature_channels(), w[2], 1);
      if (config_.fusion == DemFusion::concat) d1_channels = 2 * w[2];
    }
  }
  alpha_.name = "fem.alpha";
  alpha_.value = config_.alpha_init;
  ffm1_ = FeatureFusion("ffm1", w[3], w[4], config_.ffm_channels,
                        config_.ffm_relu);
  ffm2_ = FeatureFusion("ffm2", w[4], w[4], config_.ffm_channels,
                        config_.ffm_relu);
  const std::array<int, kNumDetectors> channels{
      d1_channels, config_.ffm_channels, config_.ffm_channels, w[4]};
  for (std::size_t m = 0; m < kNumDetectors; ++m) {
    heads_[m] = DetectorHead(
        detail::concat("head", m + 1), channels[m],
        static_cast<int>(config_.anchors.detectors[m].scales.size()),
        config_.cam);
  }
}

void Network::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  backbone_.init(rng);
  if (config_.has_dem()) {
    dem_.init(rng);
    if (config_.fusion == DemFusion::add ||
        config_.fusion == DemFusion::concat) {
      fusion_expand_.init_he(rng);
    }
  }
  alpha_.value = config_.alpha_init;
  ffm1_.init(rng);
  ffm2_.init(rng);
  for (DetectorHead& h : heads_) h.init(rng, config_.cls_prior);
}

NetworkOutput Network::forward(const Tensor& image) {
  if (image.c() != config_.backbone.in_channels ||
      image.h() % kInputMultiple != 0 || image.w() % kInputMultiple != 0) {
    throw ShapeError(detail::concat("network input ", to_string(image.shape()),
                                    " must have ",
                                    config_.backbone.in_channels,
                                    " channels and spatial dims that are "
                                    "multiples of ",
                                    kInputMultiple));
  }
  taps_ = backbone_.forward(image);
  NetworkOutput out;

  Tensor d1_input;
  if (config_.has_dem()) {
    density_ = dem_.forward(taps_.conv1, taps_.conv2, taps_.conv3);
    out.density = density_;
  }
  switch (config_.fusion) {
    case DemFusion::none:
      d1_input = taps_.conv3;
      break;
    case DemFusion::fem:
      d1_input = fem_enrich(taps_.conv3, density_, alpha_.value);
      break;
    case DemFusion::add:
      d1_input = add(taps_.conv3, fusion_expand_.forward(dem_.features()));
      break;
    case DemFusion::concat: {
      const Tensor expanded = fusion_expand_.forward(dem_.features());
      d1_input = concat_channels({&taps_.conv3, &expanded});
      break;
    }
  }
  const Tensor ffm1 = ffm1_.forward(taps_.conv4, taps_.conv5);
  const Tensor ffm2 = ffm2_.forward(taps_.conv5, taps_.conv5_pooled);
  const std::array<const Tensor*, kNumDetectors> inputs{&d1_input, &ffm1,
                                                        &ffm2,
                                                        &taps_.conv5_pooled};
  for (std::size_t m = 0; m < kNumDetectors; ++m) {
    out.heads[m] = heads_[m].forward(*inputs[m]);
    observed_strides_[m] = image.h() / inputs[m]->h();
  }
  return out;
}

void Network::backward(const NetworkGrads& grads) {
  std::array<Tensor, kNumDetectors> g_inputs;
  for (std::size_t m = 0; m < kNumDetectors; ++m) {
    g_inputs[m] = heads_[m].backward(grads.cls[m], grads.box[m]);
  }

  BackboneTaps g_taps;
  g_taps.conv5_pooled = std::move(g_inputs[3]);
  {
    auto [g_lo, g_hi] = ffm2_.backward(g_inputs[2]);
    accumulate(g_taps.conv5, g_lo);
    accumulate(g_taps.conv5_pooled, g_hi);
  }
  {
    auto [g_lo, g_hi] = ffm1_.backward(g_inputs[1]);
    accumulate(g_taps.conv4, g_lo);
    accumulate(g_taps.conv5, g_hi);
  }

  Tensor g_density;
  Tensor g_features;
  switch (config_.fusion) {
    case DemFusion::none:
      g_taps.conv3 = std::move(g_inputs[0]);
      break;
    case DemFusion::fem: {
      FemGrads fg = fem_enrich_backward(g_inputs[0], density_, alpha_.value);
      g_taps.conv3 = std::move(fg.f3);
      g_density = std::move(fg.density);
      alpha_.grad += fg.alpha;
      break;
    }
    case DemFusion::add:
      g_taps.conv3 = g_inputs[0];
      g_features = fusion_expand_.backward(g_inputs[0]);
      break;
    case DemFusion::concat: {
      const int c3 = taps_.conv3.c();
      const std::array<int, 2> widths{c3, c3};
      std::vector<Tensor> parts = concat_channels_backward(g_inputs[0], widths);
      g_taps.conv3 = std::move(parts[0]);
      g_features = fusion_expand_.backward(parts[1]);
      break;
    }
  }

  if (config_.has_dem()) {
    accumulate(g_density, grads.density);
    const Tensor dens_grad = zeros_like_or(g_density, density_.shape());
    DensityEstimator::TapGrads tg =
        dem_.backward(dens_grad, g_features.empty() ? nullptr : &g_features);
    g_taps.conv1 = std::move(tg.tap1);
    g_taps.conv2 = std::move(tg.tap2);
    accumulate(g_taps.conv3, tg.tap3);
  }
  backbone_.backward(g_taps);
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  backbone_.collect(out);
  if (config_.has_dem()) {
    dem_.collect(out);
    if (config_.fusion == DemFusion::fem) alpha_.collect(out);
    if (config_.fusion == DemFusion::add ||
        config_.fusion == DemFusion::concat) {
      fusion_expand_.collect(out);
    }
  }
  ffm1_.collect(out);
  ffm2_.collect(out);
  for (DetectorHead& h : heads_) h.collect(out);
  return out;
}

void Network::zero_grad() {
  backbone_.zero_grad();
  if (config_.has_dem()) {
    dem_.zero_grad();
    fusion_expand_.zero_grad();
  }
  alpha_.grad = 0.0;
  ffm1_.zero_grad();
  ffm2_.zero_grad();
  for (DetectorHead& h : heads_) h.zero_grad();
}

}  // namespace dafe
