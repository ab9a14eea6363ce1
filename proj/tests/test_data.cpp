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


#include <gtest/gtest.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "etta/container.hpp"
#include "etta/data.hpp"
#include "etta/errors.hpp"
#include "etta/parallel.hpp"
#include "json.hpp"
#include "oracles/linear_probe.hpp"

namespace etta::data {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("etta_test_data_" + std::to_string(::getpid()) + "_" + name);
}

Tensor test_image(std::uint64_t seed) {
  return render(sample_spec(static_cast<int>(seed % 10), {}, seed), 32);
}

double mean_abs_change(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return s / static_cast<double>(a.size());
}

TEST(GenDataset, SameSeedGivesIdenticalTensors) {
  const Dataset a = gen_dataset(6, {}, 11);
  const Dataset b = gen_dataset(6, {}, 11);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  const Dataset c = gen_dataset(6, {}, 12);
  EXPECT_NE(a.images, c.images);
}

TEST(GenDataset, ShapeRangeAndBalancedLabels) {
  const Dataset d = gen_dataset(7, {32, 10}, 3);
  EXPECT_EQ(d.images.shape(), (Shape{70, 3, 32, 32}));
  EXPECT_EQ(d.num_classes, 10u);
  std::vector<int> hist(10, 0);
  for (int l : d.labels) ++hist.at(l);
  for (int h : hist) EXPECT_EQ(h, 7);
  for (float v : d.images.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  // labels are shuffled, not in class order
  EXPECT_FALSE(std::is_sorted(d.labels.begin(), d.labels.end()));
}

TEST(GenDataset, FewerClassesAndBadConfig) {
  const Dataset d = gen_dataset(4, {16, 3}, 1);
  EXPECT_EQ(d.images.shape(), (Shape{12, 3, 16, 16}));
  for (int l : d.labels) EXPECT_LT(l, 3);
  EXPECT_THROW(gen_dataset(1, {32, 11}, 1), ConfigError);
  EXPECT_THROW(gen_dataset(1, {32, 0}, 1), ConfigError);
  EXPECT_THROW(gen_dataset(1, {4, 10}, 1), ConfigError);
}

TEST(GenDataset, RenderIsPure) {
  const SampleSpec s = sample_spec(4, {}, 99);
  EXPECT_EQ(s, sample_spec(4, {}, 99));
  EXPECT_EQ(render(s, 32), render(s, 32));
  EXPECT_EQ(s.shape, Shape2D::kTriangle);
  EXPECT_THROW(sample_spec(10, {}, 1), IndexError);
}

TEST(GenDataset, IndependentOfThreadCount) {
  set_worker_count(1);
  const Dataset a = gen_dataset(5, {}, 21);
  set_worker_count(4);
  const Dataset b = gen_dataset(5, {}, 21);
  set_worker_count(1);
  EXPECT_EQ(a.images, b.images);
}

TEST(GenDataset, EveryClassDrawsItsShape) {
  // a shape must cover part of the image but not all of it
  for (int label = 0; label < 10; ++label) {
    SampleSpec s = sample_spec(label, {}, 5);
    s.fg = {1.0f, 1.0f, 1.0f};
    s.bg = {0.0f, 0.0f, 0.0f};
    s.gradient = {0.0f, 0.0f};
    const Tensor img = render(s, 32);
    std::size_t lit = 0;
    for (std::size_t i = 0; i < 32 * 32; ++i) lit += img[i] > 0.5f ? 1 : 0;
    EXPECT_GT(lit, 20u) << shape_name(s.shape);
    EXPECT_LT(lit, 32u * 32u / 2) << shape_name(s.shape);
  }
}

TEST(GenDataset, LinearProbeStaysBelowModelThreshold) {
  // raw pixels must not make the task easy: a linear probe has to stay
  // below the 90% clean accuracy the pretrained model is held to
  const Dataset train = gen_dataset(200, {}, 31);
  const Dataset test = gen_dataset(100, {}, 32);
  const double acc = testing::linear_probe_accuracy(train, test);
  RecordProperty("probe_accuracy", std::to_string(acc));
  EXPECT_LT(acc, 0.90);
  EXPECT_GT(acc, 0.10);
}

TEST(Corruption, ParseNames) {
  for (CorruptionKind k : kAllCorruptions) EXPECT_EQ(parse_corruption(corruption_name(k)), k);
  EXPECT_THROW(parse_corruption("fog"), ConfigError);
}

TEST(Corruption, IdentityAtZeroMagnitude) {
  const Tensor img = test_image(1);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kGaussianNoise, 0.0f, 3), img);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kImpulseNoise, 0.0f, 3), img);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kBoxBlur, 0.0f, 3), img);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kBrightness, 0.0f, 3), img);
  EXPECT_EQ(apply_corruption(img, CorruptionKind::kPixelate, 1.0f, 3), img);
  // contrast factor 1.0
  const Tensor c = apply_corruption(img, CorruptionKind::kContrast, 0.0f, 3);
  EXPECT_LT(max_abs_diff(c, img), 1e-6f);
}

TEST(Corruption, PixelateMatchesNearestDownUp) {
  const Tensor img = test_image(2);
  const Tensor out = apply_corruption(img, CorruptionKind::kPixelate, 4.0f, 0);
  // 8x8 nearest-neighbour downsample (source pixel floor((i + 0.5) * 4)),
  // then replicate each value over a 4x4 block
  Tensor small({3, 8, 8});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        small[(c * 8 + i) * 8 + j] = img[(c * 32 + (4 * i + 2)) * 32 + (4 * j + 2)];
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x)
        ASSERT_EQ(out[(c * 32 + y) * 32 + x], small[(c * 8 + y / 4) * 8 + x / 4]);
}

TEST(Corruption, ContrastAndBrightnessFormulas) {
  const Tensor img = test_image(3);
  const Tensor c = apply_corruption(img, CorruptionKind::kContrast, 0.6f, 0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 1024; ++i) mean += img[ch * 1024 + i];
    mean /= 1024.0;
    for (std::size_t i = 0; i < 1024; ++i) {
      ASSERT_NEAR(c[ch * 1024 + i], (img[ch * 1024 + i] - mean) * 0.4 + mean, 1e-5);
    }
  }
  const Tensor b = apply_corruption(img, CorruptionKind::kBrightness, 0.3f, 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    ASSERT_FLOAT_EQ(b[i], std::min(1.0f, img[i] + 0.3f));
  }
}

TEST(Corruption, BoxBlurKeepsConstantsAndSmooths) {
  const Tensor flat = Tensor::full({3, 16, 16}, 0.37f);
  EXPECT_LT(max_abs_diff(apply_corruption(flat, CorruptionKind::kBoxBlur, 2.0f, 0), flat), 1e-6f);
  const Tensor img = test_image(4);
  const Tensor blurred = apply_corruption(img, CorruptionKind::kBoxBlur, 1.0f, 0);
  // interior pixel equals its 3x3 mean
  double s = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) s += img[(10 + dy) * 32 + (12 + dx)];
  EXPECT_NEAR(blurred[10 * 32 + 12], s / 9.0, 1e-6);
  // corner averages only the 2x2 pixels inside the image
  const double corner = (img[0] + img[1] + img[32] + img[33]) / 4.0;
  EXPECT_NEAR(blurred[0], corner, 1e-6);
}

TEST(Corruption, ImpulseHitsAboutTheRequestedFraction) {
  const Tensor img = Tensor::full({3, 32, 32}, 0.5f);
  const Tensor out = apply_corruption(img, CorruptionKind::kImpulseNoise, 0.2f, 8);
  std::size_t zeros = 0, ones = 0;
  for (float v : out.values()) {
    zeros += v == 0.0f;
    ones += v == 1.0f;
  }
  EXPECT_NEAR(double(zeros + ones) / out.size(), 0.2, 0.03);
  EXPECT_NEAR(double(zeros) / double(zeros + ones), 0.5, 0.08);
}

TEST(Corruption, OutputsClippedAndSeedDeterministic) {
  for (CorruptionKind k : kAllCorruptions) {
    for (int sev = 1; sev <= 5; ++sev) {
      const Tensor img = test_image(10 + sev);
      const Tensor a = corrupt(img, {k, sev, 77});
      EXPECT_EQ(a, corrupt(img, {k, sev, 77})) << corruption_name(k);
      for (float v : a.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
  }
  const Tensor img = test_image(5);
  EXPECT_NE(corrupt(img, {CorruptionKind::kGaussianNoise, 3, 1}),
            corrupt(img, {CorruptionKind::kGaussianNoise, 3, 2}));
}

TEST(Corruption, DamageGrowsWithSeverity) {
  // with the seed fixed, noise draws are shared across severities, so the
  // change from the clean image can only grow
  for (CorruptionKind k : {CorruptionKind::kGaussianNoise, CorruptionKind::kImpulseNoise,
                           CorruptionKind::kContrast, CorruptionKind::kBrightness}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Tensor img = test_image(seed);
      double prev = 0.0;
      for (int sev = 1; sev <= 5; ++sev) {
        const double change = mean_abs_change(img, corrupt(img, {k, sev, seed}));
        EXPECT_GE(change, prev) << corruption_name(k) << " severity " << sev;
        prev = change;
      }
    }
  }
}

TEST(Corruption, RejectsBadInputs) {
  Tensor img = test_image(6);
  EXPECT_THROW(corrupt(img, {CorruptionKind::kContrast, 0, 0}), ConfigError);
  EXPECT_THROW(corrupt(img, {CorruptionKind::kContrast, 6, 0}), ConfigError);
  EXPECT_THROW(apply_corruption(img, CorruptionKind::kBrightness, -0.1f, 0), ConfigError);
  img[5] = 1.5f;
  EXPECT_THROW(apply_corruption(img, CorruptionKind::kBrightness, 0.1f, 0), DataError);
  EXPECT_THROW(apply_corruption(Tensor({1, 4, 4}), CorruptionKind::kBrightness, 0.1f, 0),
               DimensionError);
}

TEST(CorruptionTable, ShippedTableIsMonotone) {
  const CorruptionTable& t = default_corruption_table();
  for (CorruptionKind k : kAllCorruptions) {
    for (int sev = 2; sev <= 5; ++sev) EXPECT_GE(t.at(k, sev), t.at(k, sev - 1));
  }
  EXPECT_FLOAT_EQ(t.at(CorruptionKind::kGaussianNoise, 1), 0.04f);
  EXPECT_FLOAT_EQ(t.at(CorruptionKind::kGaussianNoise, 5), 0.10f);
}

TEST(CorruptionTable, LoaderRejectsMalformedTables) {
  const nlohmann::json good = nlohmann::json::parse(std::ifstream(default_corruption_table_path()));
  auto write_and_load = [&](const nlohmann::json& j) {
    const fs::path p = temp_path("table.json");
    std::ofstream(p) << j.dump();
    struct Cleanup {
      fs::path p;
      ~Cleanup() { fs::remove(p); }
    } cleanup{p};
    return load_corruption_table(p);
  };
  EXPECT_NO_THROW(write_and_load(good));
  nlohmann::json bad = good;
  bad["kinds"]["contrast"]["magnitude"] = {0.5, 0.4, 0.6, 0.7, 0.8};
  EXPECT_THROW(write_and_load(bad), FormatError);
  bad = good;
  bad["kinds"].erase("pixelate");
  EXPECT_THROW(write_and_load(bad), FormatError);
  bad = good;
  bad["kinds"]["box_blur"]["magnitude"] = {1, 2, 3};
  EXPECT_THROW(write_and_load(bad), FormatError);
  bad = good;
  bad["kinds"]["fog"] = good["kinds"]["contrast"];
  EXPECT_THROW(write_and_load(bad), FormatError);
  EXPECT_THROW(load_corruption_table(temp_path("missing.json")), FormatError);
}

TEST(CorruptDataset, PerImageSeedsAndDeterminism) {
  const Dataset clean = gen_dataset(2, {}, 4);
  const Dataset a = corrupt_dataset(clean, CorruptionKind::kGaussianNoise, 5, 9);
  EXPECT_EQ(a.images, corrupt_dataset(clean, CorruptionKind::kGaussianNoise, 5, 9).images);
  EXPECT_EQ(a.labels, clean.labels);
  EXPECT_EQ(a.image(3), corrupt(clean.image(3), {CorruptionKind::kGaussianNoise, 5,
                                                  Rng::mix(9, 3)}));
}

TEST(Ingest, RoundTrip) {
  const Dataset d = gen_dataset(3, {}, 8);
  const fs::path p = temp_path("ds.bin");
  export_dataset(d, p);
  const Dataset back = ingest_raw(p);
  fs::remove(p);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.num_classes, 10u);
}

TEST(Ingest, RejectsBadFiles) {
  const fs::path p = temp_path("bad.bin");
  auto put = [&](Tensor images, Tensor labels, std::string kind = "dataset") {
    Container c;
    c.kind = std::move(kind);
    c.put("images", std::move(images));
    c.put("labels", std::move(labels));
    write_container(p, c);
  };
  put(Tensor({2, 1, 32, 32}, 0.5f), Tensor({2}));
  EXPECT_THROW(ingest_raw(p), FormatError);
  put(Tensor({2, 3, 16, 16}, 0.5f), Tensor({2}));
  EXPECT_THROW(ingest_raw(p), FormatError);
  put(Tensor({2, 3, 32, 32}, 0.5f), Tensor({3}));
  EXPECT_THROW(ingest_raw(p), FormatError);
  put(Tensor({2, 3, 32, 32}, 0.5f), Tensor({2}), "checkpoint");
  EXPECT_THROW(ingest_raw(p), FormatError);
  put(Tensor({2, 3, 32, 32}, 0.5f), Tensor({2}, std::vector<float>{1.0f, 10.0f}));
  EXPECT_THROW(ingest_raw(p), ValidationError);
  put(Tensor({2, 3, 32, 32}, 0.5f), Tensor({2}, std::vector<float>{1.5f, 0.0f}));
  EXPECT_THROW(ingest_raw(p), ValidationError);
  put(Tensor({2, 3, 32, 32}, 2.0f), Tensor({2}));
  EXPECT_THROW(ingest_raw(p), ValidationError);
  // fewer classes configured than the labels use
  put(Tensor({2, 3, 32, 32}, 0.5f), Tensor({2}, std::vector<float>{4.0f, 0.0f}));
  EXPECT_THROW(ingest_raw(p, {32, 4}), ValidationError);
  EXPECT_NO_THROW(ingest_raw(p, {32, 5}));
  std::ofstream(p, std::ios::binary) << "not a container";
  EXPECT_THROW(ingest_raw(p), FormatError);
  fs::remove(p);
}

TEST(Ppm, HeaderAndPayload) {
  const Dataset d = gen_dataset(1, {}, 2);
  const fs::path p = temp_path("strip.ppm");
  write_ppm_strip(d, 4, p);
  std::ifstream in(p, std::ios::binary);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  fs::remove(p);
  const std::string header = "P6\n128 32\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 128u * 32u * 3u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  // first pixel red channel of image 0
  const int want = static_cast<int>(std::lround(d.images[0] * 255.0f));
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]), want);
}

}  // namespace
}  // namespace etta::data
