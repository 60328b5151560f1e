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

#include "dafe/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dafe/error.hpp"

namespace dafe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ValueError("expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ValueError("expected a number, got '" + v + "'");
  return d;
}

int to_int(const std::string& v) {
  std::size_t used = 0;
  long i = 0;
  try {
    i = std::stol(v, &used);
  } catch (const std::exception&) {
    throw ValueError("expected an integer, got '" + v + "'");
  }
  if (used != v.size()) throw ValueError("expected an integer, got '" + v + "'");
  return static_cast<int>(i);
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ValueError("expected a boolean, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  for (const std::string& p : split(v, ',')) out.push_back(to_int(p));
  return out;
}

std::vector<double> to_double_list(const std::string& v) {
  std::vector<double> out;
  for (const std::string& p : split(v, ',')) out.push_back(to_double(p));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

DetectorAnchors to_detector(const std::string& v) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) {
    throw ValueError("expected 'stride:scale,scale', got '" + v + "'");
  }
  return DetectorAnchors{to_int(trim(v.substr(0, colon))),
                         to_double_list(v.substr(colon + 1))};
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["backbone.in_channels"] = [](RunConfig& c, const std::string& v) {
      c.network.backbone.in_channels = to_int(v);
    };
    t["backbone.widths"] = [](RunConfig& c, const std::string& v) {
      const auto w = to_int_list(v);
      if (w.size() != 5) throw ValueError("backbone.widths needs 5 values");
      std::copy(w.begin(), w.end(), c.network.backbone.widths.begin());
    };
    t["backbone.convs_per_block"] = [](RunConfig& c, const std::string& v) {
      c.network.backbone.convs_per_block = to_int(v);
    };
    t["network.ffm_channels"] = [](RunConfig& c, const std::string& v) {
      c.network.ffm_channels = to_int(v);
    };
    t["network.ffm_relu"] = [](RunConfig& c, const std::string& v) {
      c.network.ffm_relu = to_bool(v);
    };
    t["network.fusion"] = [](RunConfig& c, const std::string& v) {
      c.network.fusion = parse_dem_fusion(v);
    };
    t["network.alpha_init"] = [](RunConfig& c, const std::string& v) {
      c.network.alpha_init = to_double(v);
    };
    t["network.cls_prior"] = [](RunConfig& c, const std::string& v) {
      c.network.cls_prior = to_double(v);
    };
    t["cam.enabled"] = [](RunConfig& c, const std::string& v) {
      c.network.cam.enabled = to_bool(v);
    };
    t["cam.dilations"] = [](RunConfig& c, const std::string& v) {
      c.network.cam.dilations = to_int_list(v);
    };
    t["cam.branch_width"] = [](RunConfig& c, const std::string& v) {
      c.network.cam.branch_width = to_int(v);
    };
    t["cam.residual"] = [](RunConfig& c, const std::string& v) {
      c.network.cam.residual = to_bool(v);
    };
    t["dem.reduce_width"] = [](RunConfig& c, const std::string& v) {
      c.network.dem.reduce_width = to_int(v);
    };
    t["anchors.base_size"] = [](RunConfig& c, const std::string& v) {
      c.network.anchors.base_size = to_double(v);
    };
    for (int m = 0; m < kNumDetectors; ++m) {
      t["anchors.d" + std::to_string(m + 1)] = [m](RunConfig& c,
                                                   const std::string& v) {
        c.network.anchors.detectors.at(static_cast<std::size_t>(m)) =
            to_detector(v);
      };
    }
    t["gaussian.sigma_mode"] = [](RunConfig& c, const std::string& v) {
      if (v == "fixed") {
        c.gaussian.sigma_mode = SigmaMode::fixed;
      } else if (v == "box_adaptive") {
        c.gaussian.sigma_mode = SigmaMode::box_adaptive;
      } else {
        throw ValueError("sigma_mode must be fixed or box_adaptive");
      }
    };
    t["gaussian.sigma_fixed"] = [](RunConfig& c, const std::string& v) {
      c.gaussian.sigma_fixed = to_double(v);
    };
    t["gaussian.adaptive_coeff"] = [](RunConfig& c, const std::string& v) {
      c.gaussian.adaptive_coeff = to_double(v);
    };
    t["gaussian.truncation_radius"] = [](RunConfig& c, const std::string& v) {
      c.gaussian.truncation_radius = to_double(v);
    };
    t["gaussian.normalize"] = [](RunConfig& c, const std::string& v) {
      c.gaussian.normalize_after_truncation = to_bool(v);
    };
    t["loss.lambda_b"] = [](RunConfig& c, const std::string& v) {
      c.train.weights.lambda_b = to_double(v);
    };
    t["loss.lambda_d"] = [](RunConfig& c, const std::string& v) {
      c.train.weights.lambda_d = to_double(v);
    };
    t["loss.density_norm"] = [](RunConfig& c, const std::string& v) {
      if (v == "squared_mean") {
        c.train.density_norm = DensityLossNorm::squared_mean;
      } else if (v == "l2") {
        c.train.density_norm = DensityLossNorm::l2;
      } else {
        throw ValueError("density_norm must be squared_mean or l2");
      }
    };
    t["match.positive_iou"] = [](RunConfig& c, const std::string& v) {
      c.train.match.positive_iou = to_double(v);
    };
    t["match.negative_iou"] = [](RunConfig& c, const std::string& v) {
      c.train.match.negative_iou = to_double(v);
    };
    t["match.force_best_per_gt"] = [](RunConfig& c, const std::string& v) {
      c.train.match.force_best_per_gt = to_bool(v);
    };
    t["match.force_scope"] = [](RunConfig& c, const std::string& v) {
      if (v == "detector") {
        c.train.match.force_scope = ForceScope::detector;
      } else if (v == "image") {
        c.train.match.force_scope = ForceScope::image;
      } else {
        throw ValueError("force_scope must be detector or image");
      }
    };
    t["match.middle_band_negative"] = [](RunConfig& c, const std::string& v) {
      c.train.match.middle_band_negative = to_bool(v);
    };
    t["ohem.budget"] = [](RunConfig& c, const std::string& v) {
      c.train.ohem.budget = to_int(v);
    };
    t["ohem.max_pos_fraction"] = [](RunConfig& c, const std::string& v) {
      c.train.ohem.max_pos_fraction = to_double(v);
    };
    t["optimizer.base_lr"] = [](RunConfig& c, const std::string& v) {
      c.train.sgd.base_lr = to_double(v);
    };
    t["optimizer.momentum"] = [](RunConfig& c, const std::string& v) {
      c.train.sgd.momentum = to_double(v);
    };
    t["optimizer.weight_decay"] = [](RunConfig& c, const std::string& v) {
      c.train.sgd.weight_decay = to_double(v);
    };
    t["optimizer.gamma"] = [](RunConfig& c, const std::string& v) {
      c.train.sgd.gamma = to_double(v);
    };
    t["optimizer.milestones"] = [](RunConfig& c, const std::string& v) {
      c.train.sgd.milestones = to_int_list(v);
    };
    t["optimizer.iterations"] = [](RunConfig& c, const std::string& v) {
      c.train.iterations = to_int(v);
    };
    t["train.seed"] = [](RunConfig& c, const std::string& v) {
      c.train.seed = static_cast<std::uint64_t>(std::stoull(v));
    };
    t["train.hflip"] = [](RunConfig& c, const std::string& v) {
      c.train.hflip = to_bool(v);
    };
    t["train.checkpoints"] = [](RunConfig& c, const std::string& v) {
      c.train.checkpoints = to_int_list(v);
    };
    t["eval.top_k"] = [](RunConfig& c, const std::string& v) {
      c.post.top_k = to_int(v);
    };
    t["eval.nms_threshold"] = [](RunConfig& c, const std::string& v) {
      c.post.nms_threshold = to_double(v);
    };
    t["eval.score_threshold"] = [](RunConfig& c, const std::string& v) {
      c.post.score_threshold = to_double(v);
    };
    t["eval.joint_nms"] = [](RunConfig& c, const std::string& v) {
      c.post.joint_nms = to_bool(v);
    };
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  network.validate();
  train.validate();
  gaussian.validate();
  if (post.top_k < 1) throw ValueError("eval.top_k must be >= 1");
  if (!(post.nms_threshold >= 0.0 && post.nms_threshold <= 1.0)) {
    throw ValueError("eval.nms_threshold must be in [0, 1]");
  }
  if (train.weights.lambda_d > 0.0 && !network.has_dem()) {
    throw ValueError("loss.lambda_d > 0 requires network.fusion != none");
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw FormatError(detail::concat(source, ":", line_no,
                                         ": malformed section header"));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(detail::concat(source, ":", line_no,
                                       ": expected key = value"));
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos && !section.empty()) {
      key = section + "." + key;
    }
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw FormatError(detail::concat(source, ":", line_no, ": unknown key '",
                                       key, "'"));
    }
    try {
      it->second(config, value);
    } catch (const ValueError& e) {
      throw ValueError(detail::concat(source, ":", line_no, ": ", key, ": ",
                                      e.what()));
    }
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& c) {
  std::ostringstream o;
  const NetworkConfig& n = c.network;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[backbone]\n"
    << "in_channels = " << n.backbone.in_channels << "\n"
    << "widths = "
    << join(std::vector<int>(n.backbone.widths.begin(), n.backbone.widths.end()))
    << "\n"
    << "convs_per_block = " << n.backbone.convs_per_block << "\n"
    << "[network]\n"
    << "ffm_channels = " << n.ffm_channels << "\n"
    << "ffm_relu = " << b(n.ffm_relu) << "\n"
    << "fusion = " << to_string(n.fusion) << "\n"
    << "alpha_init = " << fmt(n.alpha_init) << "\n"
    << "cls_prior = " << fmt(n.cls_prior) << "\n"
    << "[cam]\n"
    << "enabled = " << b(n.cam.enabled) << "\n"
    << "dilations = " << join(n.cam.dilations) << "\n"
    << "branch_width = " << n.cam.branch_width << "\n"
    << "residual = " << b(n.cam.residual) << "\n"
    << "[dem]\n"
    << "reduce_width = " << n.dem.reduce_width << "\n"
    << "[anchors]\n"
    << "base_size = " << fmt(n.anchors.base_size) << "\n";
  for (std::size_t m = 0; m < n.anchors.detectors.size(); ++m) {
    o << "d" << m + 1 << " = " << n.anchors.detectors[m].stride << ":"
      << join(n.anchors.detectors[m].scales) << "\n";
  }
  o << "[gaussian]\n"
    << "sigma_mode = "
    << (c.gaussian.sigma_mode == SigmaMode::fixed ? "fixed" : "box_adaptive")
    << "\n"
    << "sigma_fixed = " << fmt(c.gaussian.sigma_fixed) << "\n"
    << "adaptive_coeff = " << fmt(c.gaussian.adaptive_coeff) << "\n"
    << "truncation_radius = " << fmt(c.gaussian.truncation_radius) << "\n"
    << "normalize = " << b(c.gaussian.normalize_after_truncation) << "\n"
    << "[loss]\n"
    << "lambda_b = " << fmt(c.train.weights.lambda_b) << "\n"
    << "lambda_d = " << fmt(c.train.weights.lambda_d) << "\n"
    << "density_norm = "
    << (c.train.density_norm == DensityLossNorm::l2 ? "l2" : "squared_mean")
    << "\n"
    << "[match]\n"
    << "positive_iou = " << fmt(c.train.match.positive_iou) << "\n"
    << "negative_iou = " << fmt(c.train.match.negative_iou) << "\n"
    << "force_best_per_gt = " << b(c.train.match.force_best_per_gt) << "\n"
    << "force_scope = "
    << (c.train.match.force_scope == ForceScope::image ? "image" : "detector")
    << "\n"
    << "middle_band_negative = " << b(c.train.match.middle_band_negative) << "\n"
    << "[ohem]\n"
    << "budget = " << c.train.ohem.budget << "\n"
    << "max_pos_fraction = " << fmt(c.train.ohem.max_pos_fraction) << "\n"
    << "[optimizer]\n"
    << "base_lr = " << fmt(c.train.sgd.base_lr) << "\n"
    << "momentum = " << fmt(c.train.sgd.momentum) << "\n"
    << "weight_decay = " << fmt(c.train.sgd.weight_decay) << "\n"
    << "gamma = " << fmt(c.train.sgd.gamma) << "\n"
    << "milestones = " << join(c.train.sgd.milestones) << "\n"
    << "iterations = " << c.train.iterations << "\n"
    << "[train]\n"
    << "seed = " << c.train.seed << "\n"
    << "hflip = " << b(c.train.hflip) << "\n"
    << "checkpoints = " << join(c.train.checkpoints) << "\n"
    << "[eval]\n"
    << "top_k = " << c.post.top_k << "\n"
    << "nms_threshold = " << fmt(c.post.nms_threshold) << "\n"
    << "score_threshold = " << fmt(c.post.score_threshold) << "\n"
    << "joint_nms = " << b(c.post.joint_nms) << "\n";
  return o.str();
}

GaussianSpec parse_sigma_option(const std::string& value, GaussianSpec base) {
  const auto colon = value.find(':');
  if (colon == std::string::npos) {
    throw ValueError("--sigma expects fixed:<pixels> or adaptive:<coeff>");
  }
  const std::string mode = value.substr(0, colon);
  const double v = to_double(value.substr(colon + 1));
  if (mode == "fixed") {
    base.sigma_mode = SigmaMode::fixed;
    base.sigma_fixed = v;
  } else if (mode == "adaptive") {
    base.sigma_mode = SigmaMode::box_adaptive;
    base.adaptive_coeff = v;
  } else {
    throw ValueError("--sigma mode must be fixed or adaptive, got '" + mode + "'");
  }
  base.validate();
  return base;
}

}  // namespace dafe
