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

#include "dafe/image_io.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "dafe/error.hpp"

namespace dafe {

namespace {

struct PnmHeader {
  char kind = '5';
  int width = 0;
  int height = 0;
  int maxval = 255;
};

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) {
    throw FormatError(path.string() + ": truncated PNM header");
  }
  return value;
}

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' ||
      (magic[1] != '2' && magic[1] != '3' && magic[1] != '5' && magic[1] != '6')) {
    throw FormatError(path.string() + ": not a PGM/PPM file");
  }
  PnmHeader h;
  h.kind = magic[1];
  h.width = read_header_int(in, path);
  h.height = read_header_int(in, path);
  h.maxval = read_header_int(in, path);
  if (h.width < 1 || h.height < 1 || h.maxval < 1 || h.maxval > 255) {
    throw FormatError(path.string() + ": unsupported PNM dimensions or maxval");
  }
  return h;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const PnmHeader h = read_header(in, path);
  Image img;
  img.width = h.width;
  img.height = h.height;
  img.channels = (h.kind == '3' || h.kind == '6') ? 3 : 1;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height *
                    img.channels);
  if (h.kind == '5' || h.kind == '6') {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
      throw FormatError(path.string() + ": truncated pixel data");
    }
  } else {
    for (std::uint8_t& p : img.pixels) {
      int v = 0;
      if (!(in >> v)) throw FormatError(path.string() + ": truncated pixel data");
      p = static_cast<std::uint8_t>(v);
    }
  }
  if (h.maxval != 255) {
    for (std::uint8_t& p : img.pixels) {
      p = static_cast<std::uint8_t>(p * 255 / h.maxval);
    }
  }
  return img;
}

std::pair<int, int> read_pnm_size(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const PnmHeader h = read_header(in, path);
  return {h.width, h.height};
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValueError("write_pnm: only 1 or 3 channels supported");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

Tensor image_to_tensor(const Image& image) {
  Tensor t(Shape{1, image.channels, image.height, image.width});
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        t.at(0, c, y, x) = image.at(x, y, c) / 255.0 - 0.5;
      }
    }
  }
  return t;
}

}  // namespace dafe
