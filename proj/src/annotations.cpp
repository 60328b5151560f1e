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

#include "dafe/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "dafe/error.hpp"
#include "dafe/image_io.hpp"

namespace dafe {

std::vector<Box> AnnotationRecord::boxes() const {
  std::vector<Box> out;
  out.reserve(faces.size());
  for (const FaceAnnotation& f : faces) out.push_back(f.box());
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Parses whitespace-separated integers; false if any token is not one.
bool parse_ints(const std::string& line, std::vector<long>& out) {
  out.clear();
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0') return false;
    out.push_back(v);
  }
  return true;
}

}  // namespace

AnnotationSet parse_annotations(std::istream& in, const std::string& source) {
  AnnotationSet set;
  std::string line;
  int line_no = 0;
  auto next_line = [&](std::string& dst) {
    while (std::getline(in, dst)) {
      ++line_no;
      dst = trim(dst);
      if (!dst.empty()) return true;
    }
    return false;
  };
  auto fail = [&](const std::string& what) {
    return FormatError(detail::concat(source, ":", line_no, ": ", what));
  };

  std::vector<long> ints;
  while (next_line(line)) {
    AnnotationRecord rec;
    rec.image_path = line;
    std::string count_line;
    if (!next_line(count_line)) {
      throw fail("truncated record for '" + rec.image_path +
                 "': missing face count");
    }
    if (!parse_ints(count_line, ints) || ints.size() != 1 || ints[0] < 0) {
      throw fail("expected a non-negative face count, got '" + count_line + "'");
    }
    const long count = ints[0];
    if (count == 0) {
      // Optional all-zero placeholder line.
      const std::streampos pos = in.tellg();
      const int saved_line_no = line_no;
      std::string peek;
      if (next_line(peek)) {
        if (parse_ints(peek, ints) && ints.size() == 10 &&
            std::all_of(ints.begin(), ints.end(), [](long v) { return v == 0; })) {
          // consumed
        } else {
          in.clear();
          in.seekg(pos);
          line_no = saved_line_no;
        }
      } else {
        in.clear();
      }
    }
    for (long k = 0; k < count; ++k) {
      std::string face_line;
      if (!next_line(face_line)) {
        throw fail(detail::concat("truncated record for '", rec.image_path,
                                  "': expected ", count, " face lines, got ", k));
      }
      if (!parse_ints(face_line, ints)) {
        throw fail("face line is not all integers: '" + face_line + "'");
      }
      if (ints.size() != 10) {
        throw fail(detail::concat("face line has ", ints.size(),
                                  " fields, expected 10"));
      }
      FaceAnnotation f;
      f.x = static_cast<int>(ints[0]);
      f.y = static_cast<int>(ints[1]);
      f.w = static_cast<int>(ints[2]);
      f.h = static_cast<int>(ints[3]);
      for (int a = 0; a < 6; ++a) {
        f.attributes[static_cast<std::size_t>(a)] = static_cast<int>(ints[4 + a]);
      }
      if (f.invalid() == 1 || f.w <= 0 || f.h <= 0) {
        ++set.filtered;
        continue;
      }
      rec.faces.push_back(f);
    }
    set.records.push_back(std::move(rec));
  }
  return set;
}

AnnotationSet parse_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  return parse_annotations(in, path.string());
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotations " + path.string());
  for (const AnnotationRecord& r : records) {
    out << r.image_path << "\n" << r.faces.size() << "\n";
    if (r.faces.empty()) out << "0 0 0 0 0 0 0 0 0 0\n";
    for (const FaceAnnotation& f : r.faces) {
      out << f.x << " " << f.y << " " << f.w << " " << f.h;
      for (int a : f.attributes) out << " " << a;
      out << "\n";
    }
  }
  if (!out) throw IoError("failed writing annotations " + path.string());
}

void SynthConfig::validate() const {
  if (width < 16 || height < 16) throw ValueError("synth: image too small");
  if (min_faces < 1 || max_faces < min_faces) {
    throw ValueError("synth: need 1 <= min_faces <= max_faces");
  }
  if (!(min_size >= 2.0) || !(max_size >= min_size) ||
      max_size > std::min(width, height)) {
    throw ValueError("synth: invalid face size range");
  }
}

namespace {

// Smooth random background: a few low-frequency waves plus per-pixel noise.
void paint_background(Image& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  std::uniform_real_distribution<double> freq(0.02, 0.12);
  std::uniform_real_distribution<double> amp(8.0, 22.0);
  struct Wave {
    double fx, fy, ph, a;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 4; ++k) {
    waves.push_back({freq(rng), freq(rng), phase(rng), amp(rng)});
  }
  std::uniform_real_distribution<double> base_dist(80.0, 130.0);
  const double base = base_dist(rng);
  std::normal_distribution<double> noise(0.0, 12.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double v = base + noise(rng);
      for (const Wave& w : waves) v += w.a * std::sin(w.fx * x + w.fy * y + w.ph);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
}

void paint_face(Image& img, const FaceAnnotation& f, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> bright(190.0, 240.0);
  std::uniform_real_distribution<double> dark(20.0, 55.0);
  std::normal_distribution<double> noise(0.0, 6.0);
  const double inner = bright(rng);
  const double rim = dark(rng);
  const double cx = f.x + 0.5 * f.w;
  const double cy = f.y + 0.5 * f.h;
  const double r = 0.5 * f.w;
  const double r_inner = 0.72 * r;
  for (int y = f.y; y < f.y + f.h; ++y) {
    for (int x = f.x; x < f.x + f.w; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (d > r) continue;
      const double v = (d <= r_inner ? inner : rim) + noise(rng);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
}

bool intersects(const FaceAnnotation& a, const FaceAnnotation& b, int gap) {
  return a.x < b.x + b.w + gap && b.x < a.x + a.w + gap &&
         a.y < b.y + b.h + gap && b.y < a.y + a.h + gap;
}

}  // namespace

std::vector<AnnotationRecord> gen_synthetic(const std::filesystem::path& out_dir,
                                            int num_images, std::uint64_t seed,
                                            const SynthConfig& config) {
  config.validate();
  if (num_images < 1) throw ValueError("synth: num_images must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(config.min_faces, config.max_faces);
  std::uniform_real_distribution<double> log_size(std::log(config.min_size),
                                                  std::log(config.max_size));
  std::vector<AnnotationRecord> records;
  for (int i = 0; i < num_images; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "image_%05d.pgm", i);
    Image img{config.width, config.height, 1, {}};
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
    paint_background(img, rng);

    AnnotationRecord rec;
    rec.image_path = name;
    const int wanted = count_dist(rng);
    for (int k = 0; k < wanted; ++k) {
      for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
        const int side = std::clamp(
            static_cast<int>(std::lround(std::exp(log_size(rng)))),
            static_cast<int>(std::ceil(config.min_size)),
            static_cast<int>(std::floor(config.max_size)));
        std::uniform_int_distribution<int> xd(0, config.width - side);
        std::uniform_int_distribution<int> yd(0, config.height - side);
        FaceAnnotation f;
        f.x = xd(rng);
        f.y = yd(rng);
        f.w = side;
        f.h = side;
        const bool clash = std::any_of(
            rec.faces.begin(), rec.faces.end(),
            [&](const FaceAnnotation& o) { return intersects(f, o, 2); });
        if (clash) continue;
        paint_face(img, f, rng);
        rec.faces.push_back(f);
        break;
      }
    }
    write_pnm(out_dir / name, img);
    records.push_back(std::move(rec));
  }
  write_annotations(out_dir / "annotations.txt", records);
  return records;
}

}  // namespace dafe
