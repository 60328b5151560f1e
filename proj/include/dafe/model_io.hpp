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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dafe/config.hpp"
#include "dafe/network.hpp"

namespace dafe {

inline constexpr std::uint32_t kModelFormatVersion = 1;

// On-disk layout, all integers little-endian:
//   "DAFE" u32 version u32 config_len config_text
//   u32 count { u32 name_len name u32 dims[4] u64 offset }*count
//   float32 payload, each tensor at its absolute byte offset.
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct ModelFile {
  std::uint32_t version = kModelFormatVersion;
  std::string config_text;
  std::vector<NamedTensor> tensors;
};

void save_model_file(const std::filesystem::path& path, const ModelFile& file);
ModelFile load_model_file(const std::filesystem::path& path);

ModelFile snapshot(Network& network, std::string config_text);
// Every network parameter must appear exactly once with its exact shape.
void restore(Network& network, const ModelFile& file);

struct LoadedModel {
  RunConfig config;
  Network network;
};

void save_model(const std::filesystem::path& path, Network& network,
                const RunConfig& config);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace dafe
