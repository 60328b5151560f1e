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
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "dafe/anchors.hpp"

namespace dafe {

// One face line of a WIDER-style annotation file: box plus the six
// attribute flags (blur, expression, illumination, invalid, occlusion,
// pose), kept but unused by training.
struct FaceAnnotation {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  std::array<int, 6> attributes{};

  int invalid() const { return attributes[3]; }
  Box box() const { return Box{double(x), double(y), double(x + w), double(y + h)}; }
};

struct AnnotationRecord {
  std::string image_path;
  std::vector<FaceAnnotation> faces;

  std::vector<Box> boxes() const;
};

struct AnnotationSet {
  std::vector<AnnotationRecord> records;
  // Faces dropped for invalid == 1 or non-positive extent.
  std::size_t filtered = 0;
};

// Layout per image: path line, face-count line, then one line of ten
// integers per face. A count of 0 may be followed by one all-zero face line,
// which is consumed.
AnnotationSet parse_annotations(std::istream& in,
                                const std::string& source = "<stream>");
AnnotationSet parse_annotations(const std::filesystem::path& path);

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records);

struct SynthConfig {
  int width = 128;
  int height = 128;
  int min_faces = 1;
  int max_faces = 8;
  double min_size = 8.0;
  double max_size = 64.0;
  // Attempts per face before giving up on placing it.
  int max_attempts = 200;

  void validate() const;
};

// Writes `num_images` PGM files (image_00000.pgm, ...) and annotations.txt
// into out_dir. Faces are bright disks with a darker rim on textured
// noise, side lengths log-uniform in [min_size, max_size], never
// overlapping each other. Byte-identical output for a given seed.
std::vector<AnnotationRecord> gen_synthetic(const std::filesystem::path& out_dir,
                                            int num_images, std::uint64_t seed,
                                            const SynthConfig& config = {});

}  // namespace dafe
