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

#include "dafe/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dafe/error.hpp"
#include "dafe/loss.hpp"

namespace dafe {

std::vector<std::size_t> nms(std::span<const Box> boxes,
                             std::span<const double> scores,
                             double threshold) {
  if (boxes.size() != scores.size()) {
    throw ShapeError(detail::concat("nms: ", boxes.size(), " boxes but ",
                                    scores.size(), " scores"));
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  std::vector<char> removed(boxes.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t i = order[pos];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t later = pos + 1; later < order.size(); ++later) {
      const std::size_t j = order[later];
      if (!removed[j] && iou(boxes[i], boxes[j]) > threshold) removed[j] = 1;
    }
  }
  return keep;
}

namespace {

std::vector<Detection> suppress(std::vector<Detection> dets,
                                double threshold) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(dets.size());
  scores.reserve(dets.size());
  for (const Detection& d : dets) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  std::vector<Detection> out;
  for (std::size_t i : nms(boxes, scores, threshold)) out.push_back(dets[i]);
  return out;
}

}  // namespace

std::vector<Detection> postprocess(std::span<const DetectorOutput> outputs,
                                   std::span<const AnchorGrid> anchors,
                                   int image_w, int image_h,
                                   const PostprocessConfig& config) {
  if (outputs.size() != anchors.size()) {
    throw ShapeError("postprocess: outputs and anchor grids differ in count");
  }
  std::vector<Detection> pooled;
  for (std::size_t m = 0; m < outputs.size(); ++m) {
    const Tensor& cls = outputs[m].cls_logits;
    const Tensor& deltas = outputs[m].box_deltas;
    const AnchorGrid& grid = anchors[m];
    if (cls.n() != 1 || cls.c() != 2 * grid.num_scales ||
        cls.h() != grid.feat_h || cls.w() != grid.feat_w ||
        deltas.c() != 4 * grid.num_scales || deltas.h() != grid.feat_h ||
        deltas.w() != grid.feat_w) {
      throw ShapeError(detail::concat(
          "postprocess: detector ", m + 1, " outputs ", to_string(cls.shape()),
          " / ", to_string(deltas.shape()), " do not match its ",
          grid.num_scales, "-scale ", grid.feat_h, "x", grid.feat_w,
          " anchor grid"));
    }
    const std::vector<double> probs = face_probabilities(cls);
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t k =
        std::min(order.size(), static_cast<std::size_t>(std::max(0, config.top_k)));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        return probs[a] > probs[b] ||
                               (probs[a] == probs[b] && a < b);
                      });
    order.resize(k);

    std::vector<Detection> dets;
    const std::size_t plane = static_cast<std::size_t>(grid.feat_h) * grid.feat_w;
    for (std::size_t a : order) {
      if (probs[a] < config.score_threshold) continue;
      const int s = static_cast<int>(a / plane);
      const int i = static_cast<int>((a % plane) / grid.feat_w);
      const int j = static_cast<int>(a % grid.feat_w);
      const RegressionTarget t{deltas.at(0, 4 * s, i, j),
                               deltas.at(0, 4 * s + 1, i, j),
                               deltas.at(0, 4 * s + 2, i, j),
                               deltas.at(0, 4 * s + 3, i, j)};
      const Box b = clip_box(decode(grid.anchors[a], t), image_w, image_h);
      if (!b.valid()) continue;
      dets.push_back({b, probs[a], static_cast<int>(m) + 1});
    }
    if (!config.joint_nms) dets = suppress(std::move(dets), config.nms_threshold);
    pooled.insert(pooled.end(), dets.begin(), dets.end());
  }
  if (config.joint_nms) return suppress(std::move(pooled), config.nms_threshold);
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  return pooled;
}

EvalReport ap_at_iou(std::span<const std::vector<Detection>> detections,
                     std::span<const std::vector<Box>> ground_truth,
                     double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw ShapeError(detail::concat("ap_at_iou: detections for ",
                                    detections.size(), " images, ground truth "
                                    "for ",
                                    ground_truth.size()));
  }
  EvalReport report;
  for (const auto& gts : ground_truth) report.num_gt += gts.size();
  if (report.num_gt == 0) {
    report.no_ground_truth = true;
    return report;
  }

  struct Ref {
    std::size_t image;
    std::size_t index;
    double score;
  };
  std::vector<Ref> refs;
  for (std::size_t img = 0; img < detections.size(); ++img) {
    for (std::size_t k = 0; k < detections[img].size(); ++k) {
      refs.push_back({img, k, detections[img][k].score});
    }
  }
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) {
    return a.score > b.score;
  });

  std::vector<std::vector<char>> matched(ground_truth.size());
  for (std::size_t img = 0; img < ground_truth.size(); ++img) {
    matched[img].assign(ground_truth[img].size(), 0);
  }
  const double num_gt = static_cast<double>(report.num_gt);
  for (const Ref& r : refs) {
    const Box& box = detections[r.image][r.index].box;
    const auto& gts = ground_truth[r.image];
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[r.image][g]) continue;
      const double v = iou(box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt < gts.size() && best >= iou_threshold) {
      matched[r.image][best_gt] = 1;
      ++report.tp;
    } else {
      ++report.fp;
    }
    const double tp = static_cast<double>(report.tp);
    report.pr_points.push_back(
        {tp / num_gt, tp / static_cast<double>(report.tp + report.fp), r.score});
  }

  // Precision envelope from the right, then integrate over recall steps.
  double envelope = 0.0;
  std::vector<double> interp(report.pr_points.size());
  for (std::size_t k = report.pr_points.size(); k-- > 0;) {
    envelope = std::max(envelope, report.pr_points[k].precision);
    interp[k] = envelope;
  }
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < report.pr_points.size(); ++k) {
    report.ap += (report.pr_points[k].recall - prev_recall) * interp[k];
    prev_recall = report.pr_points[k].recall;
  }
  return report;
}

void write_pr_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "recall,precision,score_threshold\n";
  char line[128];
  for (const PrPoint& p : report.pr_points) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.recall,
                  p.precision, p.score);
    out << line;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<PrPoint> read_pr_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "recall,precision,score_threshold") {
    throw FormatError(path.string() + ": missing PR CSV header");
  }
  std::vector<PrPoint> points;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    PrPoint p;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &p.recall, &p.precision,
                    &p.score) != 3) {
      throw FormatError(detail::concat(path.string(), ":", line_no,
                                       ": malformed PR row"));
    }
    points.push_back(p);
  }
  return points;
}

void write_pr_svg(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  constexpr double kSize = 400.0;
  constexpr double kMargin = 50.0;
  auto px = [&](double r) { return kMargin + r * kSize; };
  auto py = [&](double p) { return kMargin + (1.0 - p) * kSize; };
  char buf[160];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" "
         "height=\"500\" viewBox=\"0 0 500 500\">\n";
  out << "<rect width=\"500\" height=\"500\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                px(0), py(0), px(1), py(0));
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                px(0), py(0), px(0), py(1));
  out << buf;
  for (int t = 0; t <= 10; ++t) {
    const double v = t / 10.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-size=\"10\" "
                  "text-anchor=\"middle\">%.1f</text>\n",
                  px(v), py(0) + 15, v);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-size=\"10\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  px(0) - 5, py(v) + 3, v);
    out << buf;
  }
  out << "<text x=\"250\" y=\"490\" font-size=\"12\" "
         "text-anchor=\"middle\">recall</text>\n";
  out << "<text x=\"15\" y=\"250\" font-size=\"12\" text-anchor=\"middle\" "
         "transform=\"rotate(-90 15 250)\">precision</text>\n";
  std::snprintf(buf, sizeof buf,
                "<text x=\"250\" y=\"30\" font-size=\"14\" "
                "text-anchor=\"middle\">AP = %.4f</text>\n",
                report.ap);
  out << buf;
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" "
         "points=\"";
  for (const PrPoint& p : report.pr_points) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(p.recall), py(p.precision));
    out << buf;
  }
  out << "\"/>\n</svg>\n";
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace dafe
