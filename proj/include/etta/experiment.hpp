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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "etta/adapt.hpp"
#include "etta/data.hpp"
#include "etta/train.hpp"
#include "etta/vit.hpp"

namespace etta::cli {

namespace fs = std::filesystem;

struct DataSection {
  data::DataConfig config;
  std::size_t train_per_class = 2000;
  std::size_t test_per_class = 200;
  std::size_t source_images = 512;  // unlabeled sample for source statistics
  std::string corruption_table;     // empty: the shipped table

  friend bool operator==(const DataSection&, const DataSection&) = default;
};

struct StreamSection {
  std::vector<std::string> corruptions{"gaussian_noise", "impulse_noise", "box_blur",
                                       "contrast",       "brightness",    "pixelate"};
  int severity = 5;
  std::size_t images_per_corruption = 2000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  friend bool operator==(const StreamSection&, const StreamSection&) = default;
};

// One adaptation setting to evaluate. Fields left unset take the shared
// adaptation config.
struct Variant {
  std::string name;
  std::string method = "navia";  // noadapt, normtune or navia
  std::optional<std::size_t> r;
  std::optional<std::string> layer_set;

  friend bool operator==(const Variant&, const Variant&) = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  vit::ViTConfig model;
  DataSection data;
  train::PretrainConfig pretrain;
  double min_test_accuracy = 0.90;
  adapt::TTAConfig adapt;
  StreamSection stream;
  std::vector<Variant> variants;

  // ConfigError for inconsistent settings.
  void validate() const;
  // Effective adaptation config of one variant.
  adapt::TTAConfig variant_config(const Variant& v) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Unknown keys anywhere raise ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

// The settings the repository's experiments use.
RunConfig default_run_config();
RunConfig load_run_config(const fs::path& path);
// Sets the run seed and the seeds of the training and adaptation sections.
void set_seed(RunConfig& c, std::uint64_t seed);
void write_resolved_config(const RunConfig& c, const fs::path& out_dir,
                           const std::string& command);

// Seeds of the generated splits; all derive from RunConfig::seed.
std::uint64_t train_seed(const RunConfig& c);
std::uint64_t test_seed(const RunConfig& c);
std::uint64_t source_seed(const RunConfig& c);
std::uint64_t stream_seed(const RunConfig& c, std::uint64_t stream, std::size_t corruption);

// File names inside an output directory.
fs::path train_path(const fs::path& dir);
fs::path test_path(const fs::path& dir);
fs::path source_path(const fs::path& dir);
fs::path checkpoint_path(const fs::path& dir);
fs::path stats_path(const fs::path& dir, std::size_t r);
fs::path metrics_path(const fs::path& dir);
fs::path summary_path(const fs::path& dir);

using Log = std::function<void(const std::string&)>;

// Writes the clean train/test/source splits and a PPM strip per corruption.
void cmd_gen_data(const RunConfig& c, const fs::path& out, const Log& log = {});

struct PretrainSummary {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t epochs = 0;
};

// Trains from the generated splits and writes the checkpoint, a JSONL
// training log and a summary. ValidationError when the targets are missed;
// the log is written either way.
PretrainSummary cmd_pretrain(const RunConfig& c, const fs::path& out, const Log& log = {});

// Source statistics for every merge setting a variant adapts with.
void cmd_stats(const RunConfig& c, const fs::path& out, const Log& log = {});

struct RunResult {
  std::string variant;
  std::string method;
  std::size_t r = 0;
  std::string corruption;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double mean_entropy = 0.0;
  double wall_ms = 0.0;
  double gflops = 0.0;
  double flops_ratio = 1.0;
  std::uint64_t forward_passes = 0;
  std::size_t batches = 0;
};

// The corrupted stream for one seed and corruption, as batches.
std::vector<adapt::Batch> make_stream(const RunConfig& c, std::uint64_t stream,
                                      std::size_t corruption);

// Runs every variant over every (seed, corruption) stream, resetting the
// state per stream. Writes one JSONL record per batch and a CSV row per
// stream. StateError naming the stats command when statistics are missing.
std::vector<RunResult> cmd_adapt(const RunConfig& c, const fs::path& out, const Log& log = {});

std::vector<RunResult> read_summary(const fs::path& csv);

struct ReportRow {
  std::string variant;
  std::size_t r = 0;
  double gflops = 0.0;
  std::vector<double> accuracy;  // per corruption, averaged over seeds
  double mean = 0.0;
};

struct Report {
  std::vector<std::string> corruptions;
  std::vector<ReportRow> rows;
};

Report build_report(const std::vector<RunResult>& results);
void write_report_table(const Report& report, std::ostream& out);
// Long-form CSV: one row per (corruption, variant).
void write_report_csv(const Report& report, std::ostream& out);
// Accuracy-vs-GFLOPs scatter data and a minimal SVG plot of it.
void write_scatter_csv(const Report& report, std::ostream& out);
void write_scatter_svg(const Report& report, std::ostream& out);

// Aggregates the summary CSVs of several run directories into
// report.txt, report.csv, scatter.csv and scatter.svg under `out`.
Report cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out);

}  // namespace etta::cli
