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

#include <cstdint>
#include <span>
#include <vector>

namespace dafe {

// Axis-aligned rectangle in continuous pixel coordinates.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return width() * height(); }
  bool valid() const;

  static Box from_center(double cx, double cy, double w, double h);
  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

// One detector row of the anchor table.
struct DetectorAnchors {
  int stride = 4;
  std::vector<double> scales;
};

struct AnchorConfig {
  double base_size = 16.0;
  std::vector<DetectorAnchors> detectors;

  // D1 stride 4 {1}; D2 stride 8 {1.5, 2}; D3 stride 16 {4, 8};
  // D4 stride 32 {16, 32}; sides are scale * base_size.
  static AnchorConfig table_default();
};

// Square anchors of one detector, ordered scale-major: index
// ((s * feat_h) + i) * feat_w + j for scale s at feature cell (i, j).
struct AnchorGrid {
  int stride = 0;
  int feat_h = 0;
  int feat_w = 0;
  int num_scales = 0;
  std::vector<Box> anchors;

  std::size_t index(int scale, int row, int col) const {
    return (static_cast<std::size_t>(scale) * feat_h + row) * feat_w + col;
  }
};

// Anchor centres sit at ((j + 0.5) * stride, (i + 0.5) * stride); feature
// dims are ceil(image / stride). Anchors crossing the border are kept.
AnchorGrid tile_anchors(const DetectorAnchors& entry, double base_size,
                        int image_w, int image_h);
std::vector<AnchorGrid> tile_all(const AnchorConfig& config, int image_w,
                                 int image_h);

enum class AnchorLabel : std::int8_t { negative = 0, positive = 1, ignore = -1 };

// Where the best anchor of each ground truth is searched when forcing it
// positive: within each detector's grid, or over all grids of the image.
enum class ForceScope { detector, image };

struct MatchConfig {
  double positive_iou = 0.5;   // strictly greater -> positive
  double negative_iou = 0.3;   // strictly less -> negative
  bool force_best_per_gt = true;
  ForceScope force_scope = ForceScope::image;
  // Label the [negative_iou, positive_iou] band negative instead of ignore.
  bool middle_band_negative = false;
};

struct MatchResult {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;   // -1 when no ground truth overlaps
  std::vector<double> max_iou;

  std::size_t count(AnchorLabel label) const;
};

MatchResult match_anchors(std::span<const Box> anchors,
                          std::span<const Box> gts,
                          const MatchConfig& config = {});

// Matches every grid of one image. With ForceScope::detector this equals
// match_anchors per grid; with ForceScope::image each ground truth forces
// only its single best anchor across all grids (first grid wins ties).
std::vector<MatchResult> match_all(std::span<const AnchorGrid> grids,
                                   std::span<const Box> gts,
                                   const MatchConfig& config = {});

// Log-space size / scale-invariant centre parametrization.
struct RegressionTarget {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

RegressionTarget encode(const Box& anchor, const Box& gt);
Box decode(const Box& anchor, const RegressionTarget& t);

Box clip_box(const Box& b, double image_w, double image_h);

struct ImageBoxes {
  int image_w = 0;
  int image_h = 0;
  std::vector<Box> boxes;
};

struct OverlapStats {
  std::vector<double> max_iou;      // one entry per ground truth
  std::vector<double> bin_edges;    // num_bins + 1 edges over [0, 1]
  std::vector<std::size_t> counts;  // num_bins entries; empty if no GTs
  double mean = 0.0;
  double median = 0.0;
};

// For every ground truth, the best IoU reachable by any anchor of any
// detector tiled over its image.
OverlapStats anchor_overlap_stats(std::span<const ImageBoxes> images,
                                  const AnchorConfig& config,
                                  int num_bins = 10);

}  // namespace dafe
