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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "etta/tensor.hpp"

namespace etta::data {

inline constexpr std::size_t kMaxClasses = 10;
inline constexpr std::size_t kChannels = 3;

enum class Shape2D {
  kDisk,
  kRing,
  kSquare,
  kFrame,
  kTriangle,
  kPlus,
  kCross,
  kHStripes,
  kVStripes,
  kDumbbell,
};

std::string shape_name(Shape2D shape);

// Everything needed to render one image. Rendering is a pure function of
// this struct.
struct SampleSpec {
  int label = 0;
  Shape2D shape = Shape2D::kDisk;
  float cx = 16.0f, cy = 16.0f;  // centre in pixels
  float scale = 8.0f;            // half-extent in pixels
  float rotation = 0.0f;         // radians
  std::array<float, 3> fg{1.0f, 1.0f, 1.0f};
  std::array<float, 3> bg{0.0f, 0.0f, 0.0f};
  std::array<float, 2> gradient{0.0f, 0.0f};  // background slope per pixel
  std::uint64_t seed = 0;                     // background texture

  friend bool operator==(const SampleSpec&, const SampleSpec&) = default;
};

struct DataConfig {
  std::size_t image_size = 32;
  std::size_t num_classes = 10;

  // ConfigError unless 1 <= num_classes <= 10 and image_size >= 8.
  void validate() const;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

// Images [N, 3, S, S] in [0, 1]; labels in [0, num_classes).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Tensor image(std::size_t i) const;  // [3, S, S]
  // Rows [begin, end) as a new dataset.
  Dataset slice(std::size_t begin, std::size_t end) const;
};

SampleSpec sample_spec(int label, const DataConfig& config, std::uint64_t seed);

// [3, S, S] image for `spec`.
Tensor render(const SampleSpec& spec, std::size_t image_size);

// num_per_class images of every class in a seed-determined order.
Dataset gen_dataset(std::size_t num_per_class, const DataConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

enum class CorruptionKind {
  kGaussianNoise,
  kImpulseNoise,
  kBoxBlur,
  kContrast,
  kBrightness,
  kPixelate,
};

inline constexpr std::array<CorruptionKind, 6> kAllCorruptions{
    CorruptionKind::kGaussianNoise, CorruptionKind::kImpulseNoise, CorruptionKind::kBoxBlur,
    CorruptionKind::kContrast,      CorruptionKind::kBrightness,   CorruptionKind::kPixelate};

// ConfigError for an unknown name.
CorruptionKind parse_corruption(const std::string& name);
std::string corruption_name(CorruptionKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

// Per-kind magnitudes for severities 1..5. Magnitudes are:
//   gaussian_noise  noise standard deviation
//   impulse_noise   fraction of pixels replaced by salt or pepper
//   box_blur        box radius in pixels (kernel 2r+1)
//   contrast        1 - contrast factor
//   brightness      additive offset
//   pixelate        block edge in pixels
struct CorruptionTable {
  std::map<CorruptionKind, std::array<float, 5>> magnitude;

  float at(CorruptionKind kind, int severity) const;
};

// Reads a table in the documented JSON layout. FormatError on a malformed
// file, a missing kind, a wrong entry count or a decreasing row.
CorruptionTable load_corruption_table(const std::filesystem::path& path);
// The table shipped with the repository.
const CorruptionTable& default_corruption_table();
std::filesystem::path default_corruption_table_path();

// Applies `kind` at an explicit magnitude to one [3, S, S] image in [0, 1].
// Output is clipped to [0, 1]. DataError when the input leaves [0, 1].
Tensor apply_corruption(const Tensor& image, CorruptionKind kind, float magnitude,
                        std::uint64_t seed);

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec,
               const CorruptionTable& table = default_corruption_table());

// Corrupts every image; image i uses seed mix(seed, i).
Dataset corrupt_dataset(const Dataset& clean, CorruptionKind kind, int severity,
                        std::uint64_t seed,
                        const CorruptionTable& table = default_corruption_table());

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void export_dataset(const Dataset& dataset, const std::filesystem::path& path);

// FormatError for a malformed container or wrong image geometry;
// ValidationError for a label outside [0, num_classes).
Dataset ingest_raw(const std::filesystem::path& path, const DataConfig& config = {});

// Binary PPM (P6) of one [3, H, W] image, or of the first `count` images of
// a dataset tiled in a row.
void write_ppm(const Tensor& image, const std::filesystem::path& path);
void write_ppm_strip(const Dataset& dataset, std::size_t count,
                     const std::filesystem::path& path);

}  // namespace etta::data
