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

#include "dafe/pipeline.hpp"

#include <fstream>

#include <json.hpp>

#include "dafe/error.hpp"
#include "dafe/image_io.hpp"

namespace dafe {

std::vector<Sample> load_dataset(const AnnotationSet& set,
                                 const std::filesystem::path& image_root,
                                 const GaussianSpec& gaussian) {
  std::vector<Sample> samples;
  samples.reserve(set.records.size());
  for (const AnnotationRecord& rec : set.records) {
    std::filesystem::path p(rec.image_path);
    if (p.is_relative()) p = image_root / p;
    const Image img = read_pnm(p);
    samples.push_back(make_sample(rec.image_path, image_to_tensor(img), rec.boxes(),
                                  gaussian));
  }
  return samples;
}

std::vector<Detection> detect(Network& network, const Sample& sample,
                              const PostprocessConfig& config) {
  const NetworkOutput out = network.forward(sample.image);
  const auto grids =
      tile_all(network.config().anchors, sample.image.w(), sample.image.h());
  return postprocess(out.heads, grids, sample.width, sample.height, config);
}

std::vector<Detection> detect(Network& network, const Tensor& image,
                              const PostprocessConfig& config) {
  const Tensor padded = pad_to_multiple(image, kInputMultiple);
  const NetworkOutput out = network.forward(padded);
  const auto grids = tile_all(network.config().anchors, padded.w(), padded.h());
  return postprocess(out.heads, grids, image.w(), image.h(), config);
}

void write_detections_jsonl(std::ostream& out, const std::string& image,
                            std::span<const Detection> detections) {
  for (const Detection& d : detections) {
    const nlohmann::ordered_json j{{"image", image},   {"x1", d.box.x1},
                                   {"y1", d.box.y1},   {"x2", d.box.x2},
                                   {"y2", d.box.y2},   {"score", d.score},
                                   {"detector", d.detector_id}};
    out << j.dump() << "\n";
  }
}

std::map<std::string, std::vector<Detection>> read_detections_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections " + path.string());
  std::map<std::string, std::vector<Detection>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Detection d;
      d.box = Box{j.at("x1").get<double>(), j.at("y1").get<double>(),
                  j.at("x2").get<double>(), j.at("y2").get<double>()};
      d.score = j.at("score").get<double>();
      d.detector_id = j.value("detector", 0);
      out[j.at("image").get<std::string>()].push_back(d);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(detail::concat(path.string(), ":", line_no, ": ",
                                       e.what()));
    }
  }
  return out;
}

DatasetEval evaluate(Network& network, std::span<const Sample> samples,
                     const PostprocessConfig& config, double iou_threshold) {
  DatasetEval result;
  std::vector<std::vector<Box>> gts;
  for (const Sample& s : samples) {
    result.detections.push_back(detect(network, s, config));
    gts.push_back(s.faces);
  }
  result.report = ap_at_iou(result.detections, gts, iou_threshold);
  return result;
}

}  // namespace dafe
