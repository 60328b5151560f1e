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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dafe/anchors.hpp"
#include "dafe/network.hpp"

namespace dafe {

struct Detection {
  Box box;
  double score = 0.0;
  int detector_id = 1;  // 1..4
};

struct PostprocessConfig {
  int top_k = 1000;
  double nms_threshold = 0.3;
  double score_threshold = 0.01;
  // false runs NMS separately inside each detector before pooling.
  bool joint_nms = true;
};

// Greedy NMS: repeatedly keep the best remaining box (ties -> lower index)
// and drop every remaining box whose IoU with it is > threshold. Returns
// kept indices in descending score order.
std::vector<std::size_t> nms(std::span<const Box> boxes,
                             std::span<const double> scores, double threshold);

// Per detector: face probabilities, top-k, decode against anchors, clip to
// the image; then pool, suppress and drop detections below the threshold.
// Outputs must come from a single image (N == 1).
std::vector<Detection> postprocess(std::span<const DetectorOutput> outputs,
                                   std::span<const AnchorGrid> anchors,
                                   int image_w, int image_h,
                                   const PostprocessConfig& config = {});

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;  // score of the detection that produced this point
};

struct EvalReport {
  double ap = 0.0;
  std::vector<PrPoint> pr_points;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t num_gt = 0;
  bool no_ground_truth = false;
};

// All-point interpolated AP. Detections are swept in descending score
// order; each is a true positive when the unmatched ground truth of its
// image with the highest IoU reaches `iou_threshold`.
EvalReport ap_at_iou(std::span<const std::vector<Detection>> detections,
                     std::span<const std::vector<Box>> ground_truth,
                     double iou_threshold = 0.5);

// CSV with header "recall,precision,score_threshold".
void write_pr_csv(const EvalReport& report, const std::filesystem::path& path);
std::vector<PrPoint> read_pr_csv(const std::filesystem::path& path);
void write_pr_svg(const EvalReport& report, const std::filesystem::path& path);

}  // namespace dafe
