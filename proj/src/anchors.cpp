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

#include "dafe/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dafe/error.hpp"

namespace dafe {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x2 > x1 && y2 > y1;
}

Box Box::from_center(double cx, double cy, double w, double h) {
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

AnchorConfig AnchorConfig::table_default() {
  AnchorConfig config;
  config.base_size = 16.0;
  config.detectors = {{4, {1.0}}, {8, {1.5, 2.0}}, {16, {4.0, 8.0}},
                      {32, {16.0, 32.0}}};
  return config;
}

AnchorGrid tile_anchors(const DetectorAnchors& entry, double base_size,
                        int image_w, int image_h) {
  if (entry.scales.empty()) throw ValueError("tile_anchors: empty scales");
  if (entry.stride < 1 || image_w < 1 || image_h < 1) {
    throw ValueError(detail::concat("tile_anchors: bad image ", image_w, "x",
                                    image_h, " or stride ", entry.stride));
  }
  AnchorGrid grid;
  grid.stride = entry.stride;
  grid.feat_w = (image_w + entry.stride - 1) / entry.stride;
  grid.feat_h = (image_h + entry.stride - 1) / entry.stride;
  grid.num_scales = static_cast<int>(entry.scales.size());
  grid.anchors.reserve(static_cast<std::size_t>(grid.num_scales) *
                       grid.feat_h * grid.feat_w);
  for (double scale : entry.scales) {
    const double side = scale * base_size;
    for (int i = 0; i < grid.feat_h; ++i) {
      for (int j = 0; j < grid.feat_w; ++j) {
        grid.anchors.push_back(Box::from_center((j + 0.5) * entry.stride,
                                                (i + 0.5) * entry.stride, side,
                                                side));
      }
    }
  }
  return grid;
}

std::vector<AnchorGrid> tile_all(const AnchorConfig& config, int image_w,
                                 int image_h) {
  std::vector<AnchorGrid> grids;
  grids.reserve(config.detectors.size());
  for (const DetectorAnchors& d : config.detectors) {
    grids.push_back(tile_anchors(d, config.base_size, image_w, image_h));
  }
  return grids;
}

std::size_t MatchResult::count(AnchorLabel label) const {
  return static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), label));
}

MatchResult match_anchors(std::span<const Box> anchors,
                          std::span<const Box> gts,
                          const MatchConfig& config) {
  const std::size_t n = anchors.size();
  MatchResult result;
  result.labels.assign(n, AnchorLabel::negative);
  result.matched_gt.assign(n, -1);
  result.max_iou.assign(n, 0.0);

  std::vector<double> best_for_gt(gts.size(), 0.0);
  std::vector<std::size_t> best_anchor_for_gt(gts.size(), n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > result.max_iou[a]) {
        result.max_iou[a] = v;
        result.matched_gt[a] = static_cast<int>(g);
      }
      if (v > best_for_gt[g]) {
        best_for_gt[g] = v;
        best_anchor_for_gt[g] = a;
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    const double v = result.max_iou[a];
    if (v > config.positive_iou) {
      result.labels[a] = AnchorLabel::positive;
    } else if (v < config.negative_iou || config.middle_band_negative) {
      result.labels[a] = AnchorLabel::negative;
    } else {
      result.labels[a] = AnchorLabel::ignore;
    }
  }
  if (config.force_best_per_gt) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const std::size_t a = best_anchor_for_gt[g];
      if (a == n) continue;
      result.labels[a] = AnchorLabel::positive;
      result.matched_gt[a] = static_cast<int>(g);
    }
  }
  return result;
}

std::vector<MatchResult> match_all(std::span<const AnchorGrid> grids,
                                   std::span<const Box> gts,
                                   const MatchConfig& config) {
  std::vector<MatchResult> results;
  if (config.force_scope == ForceScope::detector || !config.force_best_per_gt) {
    for (const AnchorGrid& grid : grids) {
      results.push_back(match_anchors(grid.anchors, gts, config));
    }
    return results;
  }
  MatchConfig unforced = config;
  unforced.force_best_per_gt = false;
  for (const AnchorGrid& grid : grids) {
    results.push_back(match_anchors(grid.anchors, gts, unforced));
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    std::size_t best_grid = grids.size();
    std::size_t best_anchor = 0;
    for (std::size_t m = 0; m < grids.size(); ++m) {
      const auto& anchors = grids[m].anchors;
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const double v = iou(anchors[a], gts[g]);
        if (v > best) {
          best = v;
          best_grid = m;
          best_anchor = a;
        }
      }
    }
    if (best_grid == grids.size()) continue;
    results[best_grid].labels[best_anchor] = AnchorLabel::positive;
    results[best_grid].matched_gt[best_anchor] = static_cast<int>(g);
  }
  return results;
}

namespace {

void require_positive_extent(const Box& b, const char* what) {
  if (!(b.width() > 0.0 && b.height() > 0.0) || !b.valid()) {
    throw ValueError(detail::concat(what, " box (", b.x1, ", ", b.y1, ", ",
                                    b.x2, ", ", b.y2,
                                    ") has non-positive extent"));
  }
}

}  // namespace

RegressionTarget encode(const Box& anchor, const Box& gt) {
  require_positive_extent(anchor, "anchor");
  require_positive_extent(gt, "ground-truth");
  const double aw = anchor.width();
  const double ah = anchor.height();
  return RegressionTarget{(gt.cx() - anchor.cx()) / aw,
                          (gt.cy() - anchor.cy()) / ah,
                          std::log(gt.width() / aw), std::log(gt.height() / ah)};
}

Box decode(const Box& anchor, const RegressionTarget& t) {
  require_positive_extent(anchor, "anchor");
  const double aw = anchor.width();
  const double ah = anchor.height();
  return Box::from_center(anchor.cx() + t.tx * aw, anchor.cy() + t.ty * ah,
                          aw * std::exp(t.tw), ah * std::exp(t.th));
}

Box clip_box(const Box& b, double image_w, double image_h) {
  return Box{std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h),
             std::clamp(b.x2, 0.0, image_w), std::clamp(b.y2, 0.0, image_h)};
}

OverlapStats anchor_overlap_stats(std::span<const ImageBoxes> images,
                                  const AnchorConfig& config, int num_bins) {
  if (num_bins < 1) throw ValueError("anchor_overlap_stats: num_bins < 1");
  OverlapStats stats;
  for (const ImageBoxes& image : images) {
    if (image.boxes.empty()) continue;
    const auto grids = tile_all(config, image.image_w, image.image_h);
    for (const Box& gt : image.boxes) {
      double best = 0.0;
      for (const AnchorGrid& grid : grids) {
        for (const Box& a : grid.anchors) best = std::max(best, iou(a, gt));
      }
      stats.max_iou.push_back(best);
    }
  }
  if (stats.max_iou.empty()) return stats;

  stats.bin_edges.resize(static_cast<std::size_t>(num_bins) + 1);
  for (int b = 0; b <= num_bins; ++b) {
    stats.bin_edges[static_cast<std::size_t>(b)] =
        static_cast<double>(b) / num_bins;
  }
  stats.counts.assign(static_cast<std::size_t>(num_bins), 0);
  for (double v : stats.max_iou) {
    const int b = std::min(num_bins - 1, static_cast<int>(v * num_bins));
    ++stats.counts[static_cast<std::size_t>(b)];
  }
  stats.mean = std::accumulate(stats.max_iou.begin(), stats.max_iou.end(), 0.0) /
               static_cast<double>(stats.max_iou.size());
  std::vector<double> sorted = stats.max_iou;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  stats.median = m % 2 == 1 ? sorted[m / 2]
                            : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  return stats;
}

}  // namespace dafe
