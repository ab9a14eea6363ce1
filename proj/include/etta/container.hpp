// Copyright 2026 The ETTA Authors.
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
#include <string>
#include <vector>

#include "json.hpp"

#include "etta/tensor.hpp"

namespace etta {

// Named-array container shared by checkpoints, source statistics and
// datasets.
//
// Layout:
//   bytes 0..7   magic "ETTAVIT1"
//   bytes 8..15  u64 little-endian length L of the manifest
//   next L bytes UTF-8 JSON manifest:
//                {"version":1,"kind":...,"meta":{...},
//                 "arrays":[{"name":..,"shape":[..],"offset":..},..]}
//   remainder    raw little-endian f32 payload; offsets are byte offsets
//                into the payload, arrays are stored back to back in
//                manifest order.
inline constexpr char kContainerMagic[9] = "ETTAVIT1";
inline constexpr int kContainerVersion = 1;

struct NamedArray {
  std::string name;
  Tensor value;
};

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  void put(std::string name, Tensor value);
};

std::vector<char> encode_container(const Container& c);
Container decode_container(const std::vector<char>& bytes);

// Writes atomically (temp file + rename).
void write_container(const std::filesystem::path& path, const Container& c);
// Throws FormatError on any structural problem; never returns partial data.
Container read_container(const std::filesystem::path& path);

}  // namespace etta
