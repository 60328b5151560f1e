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

// dafe: command-line front end for synthetic data generation, training,
// detection, evaluation and the diagnostic subcommands.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dafe/annotations.hpp"
#include "dafe/config.hpp"
#include "dafe/density.hpp"
#include "dafe/error.hpp"
#include "dafe/eval.hpp"
#include "dafe/gradient_suite.hpp"
#include "dafe/image_io.hpp"
#include "dafe/model_io.hpp"
#include "dafe/pipeline.hpp"
#include "dafe/train.hpp"

namespace fs = std::filesystem;
using namespace dafe;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string config_path;
};

RunConfig base_config(const Globals& g) {
  RunConfig c;
  if (!g.config_path.empty()) c = load_run_config(g.config_path);
  if (g.seed_given) c.train.seed = g.seed;
  return c;
}

fs::path annotation_root(const std::string& annots, const std::string& images) {
  if (!images.empty()) return images;
  const fs::path parent = fs::path(annots).parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

bool parse_switch(const std::string& v, const char* flag) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ValueError(std::string(flag) + " expects on or off, got '" + v + "'");
}

// ----------------------------------------------------------------- gen-synth

struct GenSynthArgs {
  std::string out;
  int count = 250;
  SynthConfig synth;
};

int run_gen_synth(const Globals& g, const GenSynthArgs& a) {
  a.synth.validate();
  if (a.count < 1) throw ValueError("--count must be >= 1");
  ensure_dir(a.out);
  const auto records = gen_synthetic(a.out, a.count, g.seed, a.synth);
  std::size_t faces = 0;
  for (const auto& r : records) faces += r.faces.size();
  std::printf("wrote %d images, %zu faces to %s\n", a.count, faces, a.out.c_str());
  return 0;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string annots;
  std::string images;
  std::string out;
  int iterations = -1;
  double lambda_d = -1.0;
  double lambda_b = -1.0;
  double lr = -1.0;
  std::string cam;
  std::string fusion;
  std::string sigma;
  std::string hflip;
  std::string init;
};

int run_train(const Globals& g, const TrainArgs& a) {
  RunConfig c = base_config(g);
  if (a.iterations >= 0) c.train.iterations = a.iterations;
  if (a.lambda_d >= 0) c.train.weights.lambda_d = a.lambda_d;
  if (a.lambda_b >= 0) c.train.weights.lambda_b = a.lambda_b;
  if (a.lr >= 0) c.train.sgd.base_lr = a.lr;
  if (!a.cam.empty()) c.network.cam.enabled = parse_switch(a.cam, "--cam");
  if (!a.fusion.empty()) c.network.fusion = parse_dem_fusion(a.fusion);
  if (!a.sigma.empty()) c.gaussian = parse_sigma_option(a.sigma, c.gaussian);
  if (!a.hflip.empty()) c.train.hflip = parse_switch(a.hflip, "--hflip");
  c.validate();

  const AnnotationSet set = parse_annotations(fs::path(a.annots));
  if (set.records.empty()) throw ValueError(a.annots + " has no images");
  const auto samples = load_dataset(set, annotation_root(a.annots, a.images), c.gaussian);
  ensure_dir(a.out);
  const fs::path out(a.out);
  {
    std::ofstream cfg(out / "config.txt");
    cfg << to_text(c);
  }

  Network net(c.network);
  if (!a.init.empty()) {
    restore(net, load_model_file(a.init));
  } else {
    net.init(c.train.seed);
  }
  std::printf("training on %zu images for %d iterations\n", samples.size(),
              c.train.iterations);
  const TrainResult r = train(net, samples, c.train, [&](int it, Network& n) {
    if (it == c.train.iterations) return;
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_%06d.dafe", it);
    save_model(out / name, n, c);
  });
  write_trace_csv(r.trace, (out / "trace.csv").string());
  save_model(out / "model.dafe", net, c);
  const TraceRow& first = r.trace.front();
  const TraceRow& last = r.trace.back();
  std::printf("loss %.6g -> %.6g; model written to %s\n", first.total, last.total,
              (out / "model.dafe").c_str());
  return 0;
}

// -------------------------------------------------------------------- detect

struct DetectArgs {
  std::string model;
  std::vector<std::string> image_paths;
  std::string annots;
  std::string images;
  std::string out;
  double threshold = 0.5;
};

int run_detect(const Globals&, const DetectArgs& a) {
  LoadedModel m = load_model(a.model);
  PostprocessConfig post = m.config.post;
  post.score_threshold = a.threshold;
  std::vector<std::pair<std::string, fs::path>> inputs;
  for (const std::string& p : a.image_paths) inputs.emplace_back(p, p);
  if (!a.annots.empty()) {
    const AnnotationSet set = parse_annotations(fs::path(a.annots));
    const fs::path root = annotation_root(a.annots, a.images);
    for (const auto& r : set.records) {
      fs::path p(r.image_path);
      inputs.emplace_back(r.image_path, p.is_relative() ? root / p : p);
    }
  }
  if (inputs.empty()) throw ValueError("detect needs --image or --annots");
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.out.empty() && a.out != "-") {
    const fs::path parent = fs::path(a.out).parent_path();
    if (!parent.empty()) ensure_dir(parent);
    file.open(a.out);
    if (!file) throw IoError("cannot write " + a.out);
    out = &file;
  }
  for (const auto& [name, path] : inputs) {
    const Tensor image = image_to_tensor(read_pnm(path));
    if (image.c() != m.config.network.backbone.in_channels) {
      throw ShapeError(path.string() + " has " + std::to_string(image.c()) +
                       " channels, model expects " +
                       std::to_string(m.config.network.backbone.in_channels));
    }
    const auto dets = detect(m.network, image, post);
    write_detections_jsonl(*out, name, dets);
  }
  return 0;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  std::string dets;
  std::string model;
  std::string annots;
  std::string images;
  std::string out;
  double iou = 0.5;
};

int run_eval(const Globals&, const EvalArgs& a) {
  const AnnotationSet set = parse_annotations(fs::path(a.annots));
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Box>> gts;
  if (!a.dets.empty() == !a.model.empty()) {
    throw ValueError("eval needs exactly one of --dets or --model");
  }
  if (!a.dets.empty()) {
    auto by_image = read_detections_jsonl(a.dets);
    for (const auto& r : set.records) {
      dets.push_back(by_image[r.image_path]);
      gts.push_back(r.boxes());
      by_image.erase(r.image_path);
    }
    if (!by_image.empty()) {
      throw ValueError("detections for unannotated image " + by_image.begin()->first);
    }
  } else {
    LoadedModel m = load_model(a.model);
    const auto samples =
        load_dataset(set, annotation_root(a.annots, a.images), m.config.gaussian);
    for (const Sample& s : samples) {
      dets.push_back(detect(m.network, s, m.config.post));
      gts.push_back(s.faces);
    }
  }
  const EvalReport report = ap_at_iou(dets, gts, a.iou);
  ensure_dir(a.out);
  const fs::path out(a.out);
  {
    std::ofstream ap(out / "ap.txt");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", report.ap);
    ap << "ap " << buf << "\n"
       << "iou " << a.iou << "\n"
       << "num_gt " << report.num_gt << "\n"
       << "tp " << report.tp << "\n"
       << "fp " << report.fp << "\n"
       << "no_ground_truth " << (report.no_ground_truth ? 1 : 0) << "\n";
  }
  write_pr_csv(report, out / "pr.csv");
  write_pr_svg(report, out / "pr.svg");
  std::printf("AP@%.2f = %.4f (%zu ground truths)\n", a.iou, report.ap, report.num_gt);
  return 0;
}

// ------------------------------------------------------------------- density

struct DensityArgs {
  std::string annots;
  std::string image;
  std::string out;
  std::string csv;
  std::string sigma;
  int stride = 4;
};

int run_density(const Globals& g, const DensityArgs& a) {
  GaussianSpec spec = base_config(g).gaussian;
  if (!a.sigma.empty()) spec = parse_sigma_option(a.sigma, spec);
  const AnnotationSet set = parse_annotations(fs::path(a.annots));
  const std::string wanted = fs::path(a.image).filename().string();
  const AnnotationRecord* record = nullptr;
  for (const auto& r : set.records) {
    if (r.image_path == a.image || fs::path(r.image_path).filename() == wanted) {
      record = &r;
      break;
    }
  }
  if (!record) throw ValueError("no annotation record for image " + a.image);
  const auto [w, h] = read_pnm_size(a.image);
  std::vector<FacePoint> points;
  for (const Box& b : record->boxes()) {
    points.push_back({b.cx(), b.cy(), b.width(), b.height()});
  }
  const DensityMap map = generate_gt_density(points, w, h, a.stride, spec);

  double peak = 0.0;
  for (double v : map.grid()) peak = std::max(peak, v);
  Image img;
  img.width = map.width();
  img.height = map.height();
  img.pixels.resize(map.grid().size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(
        peak > 0.0 ? std::lround(255.0 * map.grid()[i] / peak) : 0);
  }
  const fs::path out(a.out);
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  write_pnm(out, img);
  const fs::path csv = a.csv.empty() ? fs::path(out).replace_extension(".csv") : fs::path(a.csv);
  std::ofstream f(csv);
  if (!f) throw IoError("cannot write " + csv.string());
  char buf[40];
  for (int i = 0; i < map.height(); ++i) {
    for (int j = 0; j < map.width(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", map.at(i, j));
      f << (j ? "," : "") << buf;
    }
    f << "\n";
  }
  std::printf("mass %.9g for %zu faces; map %dx%d\n", map.mass(), points.size(),
              map.height(), map.width());
  return 0;
}

// -------------------------------------------------------------- anchor-stats

struct AnchorStatsArgs {
  std::string annots;
  std::string images;
  std::string out;
  int bins = 10;
  double face_size = 0.0;
  int count = 1000;
  int width = 128;
  int height = 128;
};

int run_anchor_stats(const Globals& g, const AnchorStatsArgs& a) {
  const RunConfig c = base_config(g);
  std::vector<ImageBoxes> images;
  if (!a.annots.empty()) {
    const AnnotationSet set = parse_annotations(fs::path(a.annots));
    const fs::path root = annotation_root(a.annots, a.images);
    for (const auto& r : set.records) {
      fs::path p(r.image_path);
      const auto [w, h] = read_pnm_size(p.is_relative() ? root / p : p);
      images.push_back({w, h, r.boxes()});
    }
  } else if (a.face_size > 0.0) {
    if (a.face_size > std::min(a.width, a.height)) {
      throw ValueError("--face-size exceeds the image");
    }
    std::mt19937_64 rng(g.seed);
    std::uniform_real_distribution<double> ux(0.0, a.width - a.face_size);
    std::uniform_real_distribution<double> uy(0.0, a.height - a.face_size);
    ImageBoxes im{a.width, a.height, {}};
    for (int k = 0; k < a.count; ++k) {
      const double x = ux(rng);
      const double y = uy(rng);
      im.boxes.push_back({x, y, x + a.face_size, y + a.face_size});
    }
    images.push_back(std::move(im));
  } else {
    throw ValueError("anchor-stats needs --annots or --face-size");
  }
  const OverlapStats s = anchor_overlap_stats(images, c.network.anchors, a.bins);
  const fs::path out(a.out);
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + a.out);
  f << "bin_low,bin_high,count\n";
  for (std::size_t b = 0; b < s.counts.size(); ++b) {
    f << s.bin_edges[b] << "," << s.bin_edges[b + 1] << "," << s.counts[b] << "\n";
  }
  std::size_t below = 0;
  for (double v : s.max_iou) below += v < 0.5;
  std::printf("%zu ground truths, mean max-IoU %.4f, median %.4f, %.1f%% below 0.5\n",
              s.max_iou.size(), s.mean, s.median,
              s.max_iou.empty() ? 0.0 : 100.0 * below / s.max_iou.size());
  return 0;
}

// ----------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  int seeds = 20;
  double tolerance = 1e-4;
  std::string op;
};

int run_gradcheck(const Globals& g, const GradcheckArgs& a) {
  if (a.seeds < 1) throw ValueError("--seeds must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < a.seeds; ++k) seeds.push_back(g.seed + static_cast<std::uint64_t>(k));
  if (!a.op.empty()) {
    bool ok = true;
    for (std::uint64_t s : seeds) {
      const GradCheckResult r = check_op_gradients(a.op, s);
      ok = ok && r.max_relative_error < a.tolerance;
      std::printf("%s seed %llu max_rel_err %.3g\n", a.op.c_str(),
                  static_cast<unsigned long long>(s), r.max_relative_error);
    }
    return ok ? 0 : 1;
  }
  const GradSuiteReport report = run_gradient_suite(seeds, a.tolerance);
  std::map<std::string, double> worst;
  for (const auto& e : report.entries) {
    worst[e.op] = std::max(worst[e.op], e.result.max_relative_error);
    if (!e.passed) {
      std::printf("FAIL %s seed %llu: %s[%zu] analytic %.9g numeric %.9g (rel %.3g)\n",
                  e.op.c_str(), static_cast<unsigned long long>(e.seed),
                  e.result.worst_param.c_str(), e.result.worst_index,
                  e.result.worst_analytic, e.result.worst_numeric,
                  e.result.max_relative_error);
    }
  }
  for (const std::string& op : gradient_suite_ops()) {
    std::printf("%-28s max_rel_err %.3g\n", op.c_str(), worst[op]);
  }
  std::printf("%s: %zu checks over %d seeds, max relative error %.3g (tolerance %g)\n",
              report.passed ? "PASS" : "FAIL", report.entries.size(), a.seeds,
              report.max_error, a.tolerance);
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density-aware face detection: data, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option_function<std::uint64_t>(
         "--seed",
         [&](const std::uint64_t& s) {
           g.seed = s;
           g.seed_given = true;
         },
         "Random seed (default 1)")
      ->trigger_on_parse();
  app.add_option("--config", g.config_path, "key=value run configuration file")
      ->check(CLI::ExistingFile);

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Write a synthetic face corpus");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of images");
  gen_cmd->add_option("--width", gen.synth.width, "Image width");
  gen_cmd->add_option("--height", gen.synth.height, "Image height");
  gen_cmd->add_option("--min-faces", gen.synth.min_faces, "Faces per image, lower bound");
  gen_cmd->add_option("--max-faces", gen.synth.max_faces, "Faces per image, upper bound");
  gen_cmd->add_option("--min-size", gen.synth.min_size, "Smallest face side in pixels");
  gen_cmd->add_option("--max-size", gen.synth.max_size, "Largest face side in pixels");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  train_cmd->add_option("--annots", tr.annots, "Annotation file")->required();
  train_cmd->add_option("--images", tr.images, "Image directory (default: annotation dir)");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--iterations", tr.iterations, "Training iterations");
  train_cmd->add_option("--lambda-d", tr.lambda_d, "Density loss weight");
  train_cmd->add_option("--lambda-b", tr.lambda_b, "Box loss weight");
  train_cmd->add_option("--lr", tr.lr, "Base learning rate");
  train_cmd->add_option("--cam", tr.cam, "Context module on|off");
  train_cmd->add_option("--fusion", tr.fusion, "Density fusion: none|add|concat|fem");
  train_cmd->add_option("--sigma", tr.sigma, "Density kernel: fixed:<px> or adaptive:<coeff>");
  train_cmd->add_option("--hflip", tr.hflip, "Random horizontal flips on|off");
  train_cmd->add_option("--init", tr.init, "Start from this model's weights");

  DetectArgs de;
  auto* detect_cmd = app.add_subcommand("detect", "Run a trained model on images");
  detect_cmd->add_option("--model", de.model, "Model file")->required();
  detect_cmd->add_option("--image", de.image_paths, "Input image (repeatable)");
  detect_cmd->add_option("--annots", de.annots, "Run on every image of this annotation file");
  detect_cmd->add_option("--images", de.images, "Image directory (default: annotation dir)");
  detect_cmd->add_option("--out", de.out, "JSON-lines output (default stdout)");
  detect_cmd->add_option("--threshold", de.threshold, "Score threshold (default 0.5)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Average precision against annotations");
  eval_cmd->add_option("--dets", ev.dets, "JSON-lines detections");
  eval_cmd->add_option("--model", ev.model, "Model file (detects at the eval threshold)");
  eval_cmd->add_option("--annots", ev.annots, "Annotation file")->required();
  eval_cmd->add_option("--images", ev.images, "Image directory (default: annotation dir)");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--iou", ev.iou, "IoU threshold (default 0.5)");

  DensityArgs dn;
  auto* density_cmd = app.add_subcommand("density", "Ground-truth density map of one image");
  density_cmd->add_option("--annots", dn.annots, "Annotation file")->required();
  density_cmd->add_option("--image", dn.image, "Image file")->required();
  density_cmd->add_option("--out", dn.out, "Output PGM (max-normalised)")->required();
  density_cmd->add_option("--csv", dn.csv, "Raw values (default: --out with .csv)");
  density_cmd->add_option("--sigma", dn.sigma, "fixed:<px> or adaptive:<coeff>");
  density_cmd->add_option("--stride", dn.stride, "Map stride in pixels (default 4)");

  AnchorStatsArgs as;
  auto* stats_cmd = app.add_subcommand("anchor-stats", "Best anchor IoU per ground truth");
  stats_cmd->add_option("--annots", as.annots, "Annotation file");
  stats_cmd->add_option("--images", as.images, "Image directory (default: annotation dir)");
  stats_cmd->add_option("--face-size", as.face_size, "Random square faces of this side instead");
  stats_cmd->add_option("--count", as.count, "Number of random faces");
  stats_cmd->add_option("--width", as.width, "Image width for random faces");
  stats_cmd->add_option("--height", as.height, "Image height for random faces");
  stats_cmd->add_option("--bins", as.bins, "Histogram bins");
  stats_cmd->add_option("--out", as.out, "Histogram CSV")->required();

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--seeds", gc.seeds, "Seeds per check, starting at --seed");
  grad_cmd->add_option("--tolerance", gc.tolerance, "Relative error bound");
  grad_cmd->add_option("--op", gc.op, "Run a single check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub->help() : app.help());
    return 2;
  }

  try {
    if (*gen_cmd) return run_gen_synth(g, gen);
    if (*train_cmd) return run_train(g, tr);
    if (*detect_cmd) return run_detect(g, de);
    if (*eval_cmd) return run_eval(g, ev);
    if (*density_cmd) return run_density(g, dn);
    if (*stats_cmd) return run_anchor_stats(g, as);
    if (*grad_cmd) return run_gradcheck(g, gc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
