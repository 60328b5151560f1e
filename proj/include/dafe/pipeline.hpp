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
#include <map>
#include <ostream>
#include <string>
#include <span>
#include <vector>

#include "dafe/annotations.hpp"
#include "dafe/eval.hpp"
#include "dafe/network.hpp"
#include "dafe/train.hpp"

namespace dafe {

// Loads every record's image (paths relative to `image_root` unless
// absolute) and builds its training sample.
std::vector<Sample> load_dataset(const AnnotationSet& set,
                                 const std::filesystem::path& image_root,
                                 const GaussianSpec& gaussian);

// Detections for one sample in original image coordinates.
std::vector<Detection> detect(Network& network, const Sample& sample,
                              const PostprocessConfig& config);
// `image` is (1, C, H, W) at original resolution.
std::vector<Detection> detect(Network& network, const Tensor& image,
                              const PostprocessConfig& config);

struct DatasetEval {
  EvalReport report;
  std::vector<std::vector<Detection>> detections;
};

// One JSON object per line:
// {"image": ..., "x1": ..., "y1": ..., "x2": ..., "y2": ..., "score": ..., "detector": ...}
void write_detections_jsonl(std::ostream& out, const std::string& image,
                            std::span<const Detection> detections);
// Detections grouped by image name, in file order.
std::map<std::string, std::vector<Detection>> read_detections_jsonl(
    const std::filesystem::path& path);

DatasetEval evaluate(Network& network, std::span<const Sample> samples,
                     const PostprocessConfig& config, double iou_threshold = 0.5);

}  // namespace dafe
