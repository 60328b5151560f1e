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

#include "dafe/model_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "dafe/error.hpp"

namespace dafe {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'F', 'E'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_bytes(std::vector<unsigned char>& out, const std::string& s) {
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(detail::concat(source_, ": truncated while reading ",
                                       what, " at byte ", pos_));
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_model_file(const std::filesystem::path& path, const ModelFile& file) {
  std::vector<unsigned char> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  put_u32(header, file.version);
  put_u32(header, static_cast<std::uint32_t>(file.config_text.size()));
  put_bytes(header, file.config_text);
  put_u32(header, static_cast<std::uint32_t>(file.tensors.size()));

  std::size_t table_size = 0;
  for (const NamedTensor& t : file.tensors) table_size += 4 + t.name.size() + 16 + 8;
  std::uint64_t offset = header.size() + table_size;
  for (const NamedTensor& t : file.tensors) {
    if (t.values.size() != t.shape.numel()) {
      throw ShapeError("tensor " + t.name + " has " + std::to_string(t.values.size()) +
                       " values for shape " + to_string(t.shape));
    }
    put_u32(header, static_cast<std::uint32_t>(t.name.size()));
    put_bytes(header, t.name);
    put_u32(header, static_cast<std::uint32_t>(t.shape.n));
    put_u32(header, static_cast<std::uint32_t>(t.shape.c));
    put_u32(header, static_cast<std::uint32_t>(t.shape.h));
    put_u32(header, static_cast<std::uint32_t>(t.shape.w));
    put_u64(header, offset);
    offset += 4 * t.values.size();
  }
  for (const NamedTensor& t : file.tensors) {
    for (float f : t.values) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, 4);
      put_u32(header, bits);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model " + path.string());
  out.write(reinterpret_cast<const char*>(header.data()),
            static_cast<std::streamsize>(header.size()));
  if (!out) throw IoError("failed writing model " + path.string());
}

ModelFile load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string source = path.string();
  Reader r(bytes, source);
  if (r.str(4, "magic") != std::string(kMagic, 4)) {
    throw FormatError(source + ": not a DAFE model file (bad magic)");
  }
  ModelFile file;
  file.version = r.u32("version");
  if (file.version != kModelFormatVersion) {
    throw FormatError(detail::concat(source, ": unsupported model version ",
                                     file.version));
  }
  file.config_text = r.str(r.u32("config length"), "config text");
  const std::uint32_t count = r.u32("tensor count");

  struct Entry {
    std::uint64_t offset;
    std::uint64_t bytes;
  };
  std::vector<Entry> entries;
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.str(r.u32("tensor name length"), "tensor name");
    if (!names.insert(t.name).second) {
      throw FormatError(source + ": duplicate tensor " + t.name);
    }
    const std::uint32_t n = r.u32("dims");
    const std::uint32_t c = r.u32("dims");
    const std::uint32_t h = r.u32("dims");
    const std::uint32_t w = r.u32("dims");
    if (n == 0 || c == 0 || h == 0 || w == 0 || n > (1u << 20) || c > (1u << 20) ||
        h > (1u << 20) || w > (1u << 20)) {
      throw FormatError(source + ": tensor " + t.name + " has invalid dims");
    }
    t.shape = Shape{static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
                    static_cast<int>(w)};
    const std::uint64_t offset = r.u64("tensor offset");
    const std::uint64_t nbytes = 4ull * t.shape.numel();
    entries.push_back({offset, nbytes});
    file.tensors.push_back(std::move(t));
  }
  const std::size_t payload_start = r.pos();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Entry& e = entries[k];
    if (e.offset < payload_start || e.offset > bytes.size() ||
        bytes.size() - e.offset < e.bytes) {
      throw FormatError(source + ": tensor " + file.tensors[k].name +
                        " payload out of range (file truncated?)");
    }
  }
  std::vector<std::size_t> order(entries.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].offset < entries[b].offset; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const Entry& prev = entries[order[k - 1]];
    if (prev.offset + prev.bytes > entries[order[k]].offset) {
      throw FormatError(source + ": tensor payloads overlap");
    }
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    NamedTensor& t = file.tensors[k];
    t.values.resize(t.shape.numel());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const std::size_t p = entries[k].offset + 4 * i;
      const std::uint32_t bits = static_cast<std::uint32_t>(bytes[p]) |
                                 static_cast<std::uint32_t>(bytes[p + 1]) << 8 |
                                 static_cast<std::uint32_t>(bytes[p + 2]) << 16 |
                                 static_cast<std::uint32_t>(bytes[p + 3]) << 24;
      std::memcpy(&t.values[i], &bits, 4);
    }
  }
  return file;
}

ModelFile snapshot(Network& network, std::string config_text) {
  ModelFile file;
  file.config_text = std::move(config_text);
  for (const ParamRef& p : network.parameters()) {
    NamedTensor t{p.name, p.shape, {}};
    t.values.reserve(p.value.size());
    for (double v : p.value) t.values.push_back(static_cast<float>(v));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

void restore(Network& network, const ModelFile& file) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const NamedTensor& t : file.tensors) by_name[t.name] = &t;
  const std::vector<ParamRef> params = network.parameters();
  std::set<std::string> expected;
  for (const ParamRef& p : params) {
    expected.insert(p.name);
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw FormatError("model file is missing parameter " + p.name);
    }
    if (!(it->second->shape == p.shape)) {
      throw ShapeError("parameter " + p.name + " has shape " +
                       to_string(it->second->shape) + ", network expects " +
                       to_string(p.shape));
    }
  }
  for (const NamedTensor& t : file.tensors) {
    if (!expected.count(t.name)) {
      throw FormatError("model file has unexpected tensor " + t.name);
    }
  }
  for (const ParamRef& p : params) {
    const NamedTensor& t = *by_name.at(p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = t.values[i];
  }
}

void save_model(const std::filesystem::path& path, Network& network,
                const RunConfig& config) {
  save_model_file(path, snapshot(network, to_text(config)));
}

LoadedModel load_model(const std::filesystem::path& path) {
  const ModelFile file = load_model_file(path);
  RunConfig config = parse_run_config(file.config_text, path.string() + ":config");
  Network network(config.network);
  restore(network, file);
  return LoadedModel{std::move(config), std::move(network)};
}

}  // namespace dafe
