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


#include "etta/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "json.hpp"

#include "etta/container.hpp"
#include "etta/errors.hpp"
#include "etta/parallel.hpp"
#include "etta/rng.hpp"

#ifndef ETTA_DATA_DIR
#define ETTA_DATA_DIR "data"
#endif

namespace etta::data {

namespace {

constexpr const char* kShapeNames[] = {"disk",     "ring",      "square",    "frame",
                                       "triangle", "plus",      "cross",     "h_stripes",
                                       "v_stripes", "dumbbell"};
constexpr const char* kCorruptionNames[] = {"gaussian_noise", "impulse_noise", "box_blur",
                                            "contrast",       "brightness",    "pixelate"};

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double h6 = 6.0 * (h - std::floor(h));
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    case 5: r = v, g = p, b = q; break;
    default: break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

// Membership in the unit-scale shape, u right and v down.
bool inside(Shape2D shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double rr = u * u + v * v;
  switch (shape) {
    case Shape2D::kDisk: return rr <= 1.0;
    case Shape2D::kRing: return rr <= 1.0 && rr >= 0.55 * 0.55;
    case Shape2D::kSquare: return std::max(au, av) <= 0.8;
    case Shape2D::kFrame: {
      const double m = std::max(au, av);
      return m <= 0.85 && m >= 0.5;
    }
    case Shape2D::kTriangle: return v <= 0.7 && v >= -1.0 + (1.7 / 0.9) * au;
    case Shape2D::kPlus: return (au <= 0.25 && av <= 0.95) || (av <= 0.25 && au <= 0.95);
    case Shape2D::kCross: {
      const double a = std::abs(u + v) / std::numbers::sqrt2, b = std::abs(u - v) / std::numbers::sqrt2;
      return (a <= 0.25 && b <= 0.95) || (b <= 0.25 && a <= 0.95);
    }
    case Shape2D::kHStripes:
      return au <= 0.9 && av <= 0.9 && static_cast<int>(std::floor((v + 0.9) / 0.3)) % 2 == 0;
    case Shape2D::kVStripes:
      return au <= 0.9 && av <= 0.9 && static_cast<int>(std::floor((u + 0.9) / 0.3)) % 2 == 0;
    case Shape2D::kDumbbell: {
      const double l = (u + 0.55) * (u + 0.55) + v * v, r = (u - 0.55) * (u - 0.55) + v * v;
      return l <= 0.4 * 0.4 || r <= 0.4 * 0.4 || (au <= 0.55 && av <= 0.1);
    }
  }
  return false;
}

void check_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != kChannels) {
    throw DimensionError("expected a [3,H,W] image, got " + shape_str(image.shape()));
  }
  for (float v : image.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image values must lie in [0,1]");
  }
}

void clip01(Tensor& t) {
  for (float& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
}

Tensor box_blur(const Tensor& image, int radius) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < kChannels; ++c) {
    const float* src = image.data() + c * h * w;
    float* dst = out.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t y0 = y >= std::size_t(radius) ? y - radius : 0;
      const std::size_t y1 = std::min(h - 1, y + radius);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t x0 = x >= std::size_t(radius) ? x - radius : 0;
        const std::size_t x1 = std::min(w - 1, x + radius);
        double s = 0.0;
        for (std::size_t yy = y0; yy <= y1; ++yy)
          for (std::size_t xx = x0; xx <= x1; ++xx) s += src[yy * w + xx];
        dst[y * w + x] = static_cast<float>(s / double((y1 - y0 + 1) * (x1 - x0 + 1)));
      }
    }
  }
  return out;
}

// Each block takes the value of the pixel nearest its centre, the same
// result as nearest-neighbour down- and up-sampling.
Tensor pixelate(const Tensor& image, std::size_t block) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < kChannels; ++c) {
    const float* src = image.data() + c * h * w;
    float* dst = out.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = std::min(h - 1, y / block * block + block / 2);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = std::min(w - 1, x / block * block + block / 2);
        dst[y * w + x] = src[sy * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

std::string shape_name(Shape2D shape) { return kShapeNames[static_cast<int>(shape)]; }

void DataConfig::validate() const {
  if (num_classes < 1 || num_classes > kMaxClasses) {
    throw ConfigError("num_classes must be in [1, " + std::to_string(kMaxClasses) + "], got " +
                      std::to_string(num_classes));
  }
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
}

Tensor Dataset::image(std::size_t i) const {
  const std::size_t s = images.dim(2);
  const std::size_t n = kChannels * s * s;
  return Tensor({kChannels, s, s},
                std::vector<float>(images.data() + i * n, images.data() + (i + 1) * n));
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw IndexError("dataset slice out of range");
  const std::size_t s = images.dim(2);
  const std::size_t n = kChannels * s * s;
  Dataset out;
  out.num_classes = num_classes;
  out.images = Tensor({end - begin, kChannels, s, s},
                      std::vector<float>(images.data() + begin * n, images.data() + end * n));
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

SampleSpec sample_spec(int label, const DataConfig& config, std::uint64_t seed) {
  config.validate();
  if (label < 0 || std::size_t(label) >= config.num_classes) {
    throw IndexError("label " + std::to_string(label) + " out of range");
  }
  const double size = static_cast<double>(config.image_size);
  Rng rng(seed);
  SampleSpec s;
  s.label = label;
  s.shape = static_cast<Shape2D>(label);
  s.scale = static_cast<float>(size * rng.uniform(0.18, 0.34));
  const double margin = 0.9 * s.scale;
  s.cx = static_cast<float>(rng.uniform(margin, size - margin));
  s.cy = static_cast<float>(rng.uniform(margin, size - margin));
  s.rotation = static_cast<float>(rng.uniform(-0.35, 0.35));
  s.fg = hsv_to_rgb(rng.uniform(), rng.uniform(0.4, 1.0), rng.uniform(0.65, 1.0));
  s.bg = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.6), rng.uniform(0.05, 0.4));
  s.gradient = {static_cast<float>(rng.uniform(-0.01, 0.01)),
                static_cast<float>(rng.uniform(-0.01, 0.01))};
  s.seed = rng.next_u64();
  return s;
}

Tensor render(const SampleSpec& spec, std::size_t image_size) {
  const std::size_t n = image_size;
  Tensor img({kChannels, n, n});
  Rng texture(spec.seed);
  const double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
  const double half = 0.5 * static_cast<double>(n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      int hits = 0;
      for (double oy : {0.25, 0.75}) {
        for (double ox : {0.25, 0.75}) {
          const double dx = x + ox - spec.cx, dy = y + oy - spec.cy;
          const double u = (c * dx + s * dy) / spec.scale;
          const double v = (-s * dx + c * dy) / spec.scale;
          hits += inside(spec.shape, u, v) ? 1 : 0;
        }
      }
      const float cover = static_cast<float>(hits) / 4.0f;
      const float shade = static_cast<float>(spec.gradient[0] * (x + 0.5 - half) +
                                             spec.gradient[1] * (y + 0.5 - half) +
                                             0.03 * texture.normal());
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        const float back = spec.bg[ch] + shade;
        img[(ch * n + y) * n + x] = back * (1.0f - cover) + spec.fg[ch] * cover;
      }
    }
  }
  clip01(img);
  return img;
}

Dataset gen_dataset(std::size_t num_per_class, const DataConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t total = num_per_class * config.num_classes;
  const std::size_t s = config.image_size, pixels = kChannels * s * s;
  Dataset d;
  d.num_classes = config.num_classes;
  d.labels.resize(total);
  for (std::size_t i = 0; i < total; ++i) d.labels[i] = static_cast<int>(i % config.num_classes);
  Rng order(seed);
  for (std::size_t i = total; i > 1; --i) std::swap(d.labels[i - 1], d.labels[order.below(i)]);
  d.images = Tensor({total, kChannels, s, s});
  parallel_for(total, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Tensor img = render(sample_spec(d.labels[i], config, Rng::mix(seed, i)), s);
      std::copy(img.values().begin(), img.values().end(), d.images.data() + i * pixels);
    }
  });
  return d;
}

CorruptionKind parse_corruption(const std::string& name) {
  for (CorruptionKind k : kAllCorruptions) {
    if (name == kCorruptionNames[static_cast<int>(k)]) return k;
  }
  throw ConfigError("unknown corruption '" + name +
                    "' (expected gaussian_noise, impulse_noise, box_blur, contrast, "
                    "brightness or pixelate)");
}

std::string corruption_name(CorruptionKind kind) {
  return kCorruptionNames[static_cast<int>(kind)];
}

float CorruptionTable::at(CorruptionKind kind, int severity) const {
  if (severity < 1 || severity > 5) {
    throw ConfigError("severity must be in 1..5, got " + std::to_string(severity));
  }
  auto it = magnitude.find(kind);
  if (it == magnitude.end()) throw ConfigError("no magnitudes for " + corruption_name(kind));
  return it->second[severity - 1];
}

CorruptionTable load_corruption_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corruption table " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corruption table " + path.string() + " is not valid JSON: " + e.what());
  }
  CorruptionTable t;
  try {
    const auto& kinds = j.at("kinds");
    for (CorruptionKind k : kAllCorruptions) {
      const std::string name = corruption_name(k);
      if (!kinds.contains(name)) throw FormatError("corruption table lacks '" + name + "'");
      const auto row = kinds.at(name).at("magnitude").get<std::vector<float>>();
      if (row.size() != 5) throw FormatError("'" + name + "' needs 5 severities");
      for (std::size_t i = 0; i < 5; ++i) {
        if (!std::isfinite(row[i]) || row[i] < 0.0f) {
          throw FormatError("'" + name + "' has a negative or non-finite magnitude");
        }
        if (i > 0 && row[i] < row[i - 1]) {
          throw FormatError("'" + name + "' magnitudes decrease with severity");
        }
      }
      std::copy(row.begin(), row.end(), t.magnitude[k].begin());
    }
    for (const auto& [name, _] : kinds.items()) parse_corruption(name);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corruption table " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("corruption table " + path.string() + ": " + e.what());
  }
  return t;
}

std::filesystem::path default_corruption_table_path() {
  return std::filesystem::path(ETTA_DATA_DIR) / "corruptions.json";
}

const CorruptionTable& default_corruption_table() {
  static const CorruptionTable table = load_corruption_table(default_corruption_table_path());
  return table;
}

Tensor apply_corruption(const Tensor& image, CorruptionKind kind, float magnitude,
                        std::uint64_t seed) {
  check_image(image);
  if (!std::isfinite(magnitude) || magnitude < 0.0f) {
    throw ConfigError("corruption magnitude must be finite and non-negative");
  }
  Tensor out = image;
  Rng rng(seed);
  switch (kind) {
    case CorruptionKind::kGaussianNoise:
      if (magnitude == 0.0f) return out;
      for (float& v : out.values()) v += magnitude * static_cast<float>(rng.normal());
      break;
    case CorruptionKind::kImpulseNoise:
      // two draws per value keep the hit set nested across magnitudes
      for (float& v : out.values()) {
        const double hit = rng.uniform();
        const float salt = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        if (hit < magnitude) v = salt;
      }
      break;
    case CorruptionKind::kBoxBlur: {
      const int radius = static_cast<int>(std::lround(magnitude));
      if (radius > 0) out = box_blur(image, radius);
      break;
    }
    case CorruptionKind::kContrast: {
      const float factor = 1.0f - magnitude;
      const std::size_t plane = image.dim(1) * image.dim(2);
      for (std::size_t c = 0; c < kChannels; ++c) {
        float* p = out.data() + c * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        const float m = static_cast<float>(mean / double(plane));
        for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * factor + m;
      }
      break;
    }
    case CorruptionKind::kBrightness:
      for (float& v : out.values()) v += magnitude;
      break;
    case CorruptionKind::kPixelate: {
      const std::size_t block = static_cast<std::size_t>(std::lround(magnitude));
      if (block > 1) out = pixelate(image, block);
      break;
    }
  }
  clip01(out);
  return out;
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, const CorruptionTable& table) {
  return apply_corruption(image, spec.kind, table.at(spec.kind, spec.severity), spec.seed);
}

Dataset corrupt_dataset(const Dataset& clean, CorruptionKind kind, int severity,
                        std::uint64_t seed, const CorruptionTable& table) {
  const float magnitude = table.at(kind, severity);
  Dataset out = clean;
  const std::size_t n = clean.images.size() / std::max<std::size_t>(1, clean.size());
  parallel_for(clean.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Tensor img = apply_corruption(clean.image(i), kind, magnitude, Rng::mix(seed, i));
      std::copy(img.values().begin(), img.values().end(), out.images.data() + i * n);
    }
  });
  return out;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  Container c;
  c.kind = "dataset";
  c.meta["num_classes"] = dataset.num_classes;
  c.meta["image_size"] = dataset.images.dim(2);
  c.put("images", dataset.images);
  Tensor labels({dataset.size()});
  for (std::size_t i = 0; i < dataset.size(); ++i) labels[i] = static_cast<float>(dataset.labels[i]);
  c.put("labels", labels);
  write_container(path, c);
}

Dataset ingest_raw(const std::filesystem::path& path, const DataConfig& config) {
  config.validate();
  const Container c = read_container(path);
  if (!c.kind.empty() && c.kind != "dataset") {
    throw FormatError(path.string() + " holds a '" + c.kind + "' container, not a dataset");
  }
  if (!c.has("images") || !c.has("labels")) {
    throw FormatError(path.string() + " needs 'images' and 'labels' arrays");
  }
  Dataset d;
  d.num_classes = config.num_classes;
  d.images = c.get("images");
  const Tensor& labels = c.get("labels");
  const std::size_t s = config.image_size;
  if (d.images.rank() != 4 || d.images.dim(1) != kChannels || d.images.dim(2) != s ||
      d.images.dim(3) != s) {
    throw FormatError("images must be [N,3," + std::to_string(s) + "," + std::to_string(s) +
                      "], got " + shape_str(d.images.shape()));
  }
  if (labels.rank() != 1 || labels.dim(0) != d.images.dim(0)) {
    throw FormatError("labels must be [N] with N matching images");
  }
  for (float v : d.images.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image values must lie in [0,1]");
  }
  d.labels.reserve(labels.size());
  for (float v : labels.values()) {
    if (!(v >= 0.0f) || v != std::floor(v) || v >= static_cast<float>(config.num_classes)) {
      throw ValidationError("label " + std::to_string(v) + " is not an integer in [0, " +
                            std::to_string(config.num_classes) + ")");
    }
    d.labels.push_back(static_cast<int>(v));
  }
  return d;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  check_image(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < kChannels; ++c) {
        const float v = image[(c * h + y) * w + x];
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
    }
  }
}

void write_ppm_strip(const Dataset& dataset, std::size_t count,
                     const std::filesystem::path& path) {
  count = std::min(count, dataset.size());
  if (count == 0) throw DataError("no images to export");
  const std::size_t s = dataset.images.dim(2);
  Tensor strip({kChannels, s, s * count});
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor img = dataset.image(i);
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
          strip[(c * s + y) * s * count + i * s + x] = img[(c * s + y) * s + x];
  }
  write_ppm(strip, path);
}

}  // namespace etta::data
