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

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dafe/anchors.hpp"
#include "dafe/density.hpp"
#include "dafe/layers.hpp"
#include "dafe/tensor.hpp"

namespace dafe {

inline constexpr int kNumDetectors = 4;
// Input spatial dims must be multiples of the coarsest detector stride.
inline constexpr int kInputMultiple = 32;

struct BackboneConfig {
  int in_channels = 1;
  std::array<int, 5> widths{8, 16, 32, 64, 64};
  int convs_per_block = 2;
};

struct CamConfig {
  bool enabled = true;
  std::vector<int> dilations{1, 2, 4};
  // Channels per branch; 0 picks ceil(input_width / |dilations|).
  int branch_width = 0;
  bool residual = false;
};

// How the density estimator feeds the stride-4 detector.
enum class DemFusion {
  none,    // no density estimator at all
  add,     // 1x1-expanded DEM features added to conv3
  concat,  // 1x1-expanded DEM features concatenated with conv3
  fem,     // conv3 + alpha * broadcast density map
};

const char* to_string(DemFusion f);
DemFusion parse_dem_fusion(const std::string& s);

struct NetworkConfig {
  BackboneConfig backbone;
  int ffm_channels = 128;
  bool ffm_relu = true;
  CamConfig cam;
  DemConfig dem;
  DemFusion fusion = DemFusion::fem;
  double alpha_init = 0.1;
  // Initial face probability encoded in the classification bias.
  double cls_prior = 0.01;
  AnchorConfig anchors = AnchorConfig::table_default();

  void validate() const;
  bool has_dem() const { return fusion != DemFusion::none; }
};

// Backbone feature taps; strides 1, 2, 4, 8, 16 and 32.
struct BackboneTaps {
  Tensor conv1;
  Tensor conv2;
  Tensor conv3;
  Tensor conv4;
  Tensor conv5;
  Tensor conv5_pooled;
};

// Mini VGG-style backbone: five blocks of 3x3 conv + relu, 2x2 max pool
// between blocks and after the last one.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config);

  BackboneTaps forward(const Tensor& image);
  // Empty tensors in `grads` are treated as zero.
  void backward(const BackboneTaps& grads);

  void init(std::mt19937_64& rng);
  void collect(std::vector<ParamRef>& out);
  void zero_grad();

 private:
  struct Block {
    std::vector<ConvLayer> convs;
    std::vector<Tensor> pre;  // pre-activation per conv
    Tensor input;             // pooled input of the block
  };
  BackboneConfig config_;
  std::array<Block, 5> blocks_;
  std::array<Tensor, 5> outputs_;
};

// Two 1x1 reductions to a common width, bilinear upsampling of the coarse
// input to the fine one, elementwise sum and (optionally) relu.
class FeatureFusion {
 public:
  FeatureFusion() = default;
  FeatureFusion(const std::string& prefix, int lo_channels, int hi_channels,
                int out_channels, bool apply_relu);

  Tensor forward(const Tensor& f_lo, const Tensor& f_hi);
  std::pair<Tensor, Tensor> backward(const Tensor& upstream);

  ConvLayer& lo() { return lo_; }
  ConvLayer& hi() { return hi_; }
  void init(std::mt19937_64& rng);
  void collect(std::vector<ParamRef>& out);
  void zero_grad();

 private:
  ConvLayer lo_;
  ConvLayer hi_;
  bool apply_relu_ = true;
  int hi_h_ = 0;
  int hi_w_ = 0;
  Tensor sum_;
};

// Parallel dilated 3x3 branches (padding = dilation), relu, concatenated
// and merged back to the input width by a 1x1 conv.
class ContextModule {
 public:
  ContextModule() = default;
  ContextModule(const std::string& prefix, int channels,
                const CamConfig& config);

  Tensor forward(const Tensor& f);
  Tensor backward(const Tensor& upstream);

  std::vector<ConvLayer>& branches() { return branches_; }
  ConvLayer& merge() { return merge_; }
  void init(std::mt19937_64& rng);
  void collect(std::vector<ParamRef>& out);
  void zero_grad();

 private:
  bool residual_ = false;
  std::vector<ConvLayer> branches_;
  std::vector<Tensor> pre_;
  ConvLayer merge_;
};

// cls_logits: (N, 2*S, H, W); channel 2s is background, 2s+1 face.
// box_deltas: (N, 4*S, H, W); channels 4s..4s+3 are (tx, ty, tw, th).
struct DetectorOutput {
  Tensor cls_logits;
  Tensor box_deltas;
};

class DetectorHead {
 public:
  DetectorHead() = default;
  DetectorHead(const std::string& prefix, int channels, int num_scales,
               const CamConfig& cam);

  DetectorOutput forward(const Tensor& f);
  Tensor backward(const Tensor& cls_grad, const Tensor& box_grad);

  int num_scales() const { return num_scales_; }
  bool has_cam() const { return cam_.has_value(); }
  void init(std::mt19937_64& rng, double cls_prior);
  void collect(std::vector<ParamRef>& out);
  void zero_grad();

 private:
  int num_scales_ = 1;
  std::optional<ContextModule> cam_;
  ConvLayer cls_;
  ConvLayer box_;
};

// f3 + alpha * density broadcast across every channel of f3.
Tensor fem_enrich(const Tensor& f3, const Tensor& density, double alpha);

struct FemGrads {
  Tensor f3;
  Tensor density;
  double alpha = 0.0;
};
FemGrads fem_enrich_backward(const Tensor& upstream, const Tensor& density,
                             double alpha);

struct NetworkOutput {
  std::array<DetectorOutput, kNumDetectors> heads;
  Tensor density;  // (N, 1, H/4, W/4); empty without a density estimator
};

struct NetworkGrads {
  std::array<Tensor, kNumDetectors> cls;
  std::array<Tensor, kNumDetectors> box;
  Tensor density;  // empty means zero
};

// Full detection graph. D1 sits on the (enriched) stride-4 conv3 map,
// D2 on FFM1 = fuse(conv4, conv5) at stride 8, D3 on FFM2 = fuse(conv5,
// pooled conv5) at stride 16 and D4 on pooled conv5 at stride 32.
class Network {
 public:
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }

  void init(std::uint64_t seed);
  NetworkOutput forward(const Tensor& image);
  // Accumulates parameter gradients for the most recent forward().
  void backward(const NetworkGrads& grads);

  std::vector<ParamRef> parameters();
  void zero_grad();

  // Strides of the feature maps feeding D1..D4.
  static constexpr std::array<int, kNumDetectors> detector_strides() {
    return {4, 8, 16, 32};
  }
  // Input strides observed in the last forward pass.
  const std::array<int, kNumDetectors>& observed_strides() const {
    return observed_strides_;
  }

  ScalarParam& alpha() { return alpha_; }

 private:
  NetworkConfig config_;
  Backbone backbone_;
  DensityEstimator dem_;
  ConvLayer fusion_expand_;
  ScalarParam alpha_;
  FeatureFusion ffm1_;
  FeatureFusion ffm2_;
  std::array<DetectorHead, kNumDetectors> heads_;

  BackboneTaps taps_;
  Tensor density_;
  std::array<int, kNumDetectors> observed_strides_{};
};

}  // namespace dafe
