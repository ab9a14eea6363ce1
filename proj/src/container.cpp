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

#include "etta/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "etta/errors.hpp"

namespace etta {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

const Tensor& Container::get(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.value;
  }
  throw FormatError("container has no array named '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void Container::put(std::string name, Tensor value) {
  for (auto& a : arrays) {
    if (a.name == name) {
      a.value = std::move(value);
      return;
    }
  }
  arrays.push_back({std::move(name), std::move(value)});
}

std::vector<char> encode_container(const Container& c) {
  nlohmann::json manifest;
  manifest["version"] = kContainerVersion;
  manifest["kind"] = c.kind;
  manifest["meta"] = c.meta;
  manifest["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    if (a.value.empty()) throw FormatError("cannot store empty array '" + a.name + "'");
    manifest["arrays"].push_back(
        {{"name", a.name}, {"shape", a.value.shape()}, {"offset", offset}});
    offset += a.value.size() * sizeof(float);
  }
  const std::string text = manifest.dump();
  std::vector<char> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), kContainerMagic, kContainerMagic + 8);
  const std::uint64_t len = text.size();
  const char* lp = reinterpret_cast<const char*>(&len);
  out.insert(out.end(), lp, lp + 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : c.arrays) {
    const char* p = reinterpret_cast<const char*>(a.value.data());
    out.insert(out.end(), p, p + a.value.size() * sizeof(float));
  }
  return out;
}

Container decode_container(const std::vector<char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw FormatError("bad magic: not an ETTAVIT1 container");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (len > bytes.size() - 16) throw FormatError("truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + long(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  Container c;
  try {
    if (manifest.at("version").get<int>() != kContainerVersion) {
      throw FormatError("unsupported container version " + manifest.at("version").dump());
    }
    c.kind = manifest.at("kind").get<std::string>();
    c.meta = manifest.value("meta", nlohmann::json::object());
    const std::size_t payload_begin = 16 + len;
    const std::size_t payload_size = bytes.size() - payload_begin;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest.at("arrays")) {
      std::string name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (shape.empty()) throw FormatError("array '" + name + "' has rank 0");
      for (std::size_t d : shape) {
        if (d == 0) throw FormatError("array '" + name + "' has a zero dimension");
      }
      if (offset != expected_offset) {
        throw FormatError("array '" + name + "' has non-contiguous offset");
      }
      const std::uint64_t nbytes = shape_numel(shape) * sizeof(float);
      if (offset + nbytes > payload_size) {
        throw FormatError("truncated payload for array '" + name + "'");
      }
      std::vector<float> values(shape_numel(shape));
      std::memcpy(values.data(), bytes.data() + payload_begin + offset, nbytes);
      c.arrays.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
      expected_offset = offset + nbytes;
    }
    if (expected_offset != payload_size) {
      throw FormatError("payload size " + std::to_string(payload_size) +
                        " does not match manifest (" + std::to_string(expected_offset) + ")");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::vector<char> bytes = encode_container(c);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace etta
