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
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "etta/errors.hpp"
#include "etta/experiment.hpp"
#include "etta/parallel.hpp"
#include "json.hpp"

namespace etta::cli {
namespace {

using nlohmann::json;

fs::path temp_dir(const std::string& name) {
  const fs::path p =
      fs::temp_directory_path() / ("etta_test_cli_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small enough for a full gen-data -> adapt pipeline in a few seconds.
RunConfig tiny_config() {
  RunConfig c = default_run_config();
  c.model.image_size = 16;
  c.model.patch_size = 4;
  c.model.hidden_dim = 16;
  c.model.num_layers = 3;
  c.model.num_heads = 2;
  c.model.mlp_ratio = 2;
  c.model.num_classes = 4;
  c.data.config.image_size = 16;
  c.data.config.num_classes = 4;
  c.data.train_per_class = 16;
  c.data.test_per_class = 8;
  c.data.source_images = 32;
  c.pretrain.epochs = 1;
  c.pretrain.batch_size = 16;
  c.pretrain.warmup_steps = 2;
  c.pretrain.target_train_accuracy = 0.0f;
  c.min_test_accuracy = 0.0;
  c.adapt.r = 2;
  c.adapt.l_bgt = 2;
  c.adapt.batch_size = 16;
  c.adapt.lambda = 0.01f;
  c.stream.corruptions = {"gaussian_noise", "contrast"};
  c.stream.images_per_corruption = 40;
  c.stream.seeds = {0, 1};
  c.variants = {{"noadapt", "noadapt", {}, {}},
                {"merge-only", "normtune", {}, {}},
                {"navia", "navia", {}, {}}};
  return c;
}

void prepare(const RunConfig& c, const fs::path& dir) {
  cmd_gen_data(c, dir);
  cmd_pretrain(c, dir);
  cmd_stats(c, dir);
}

TEST(RunConfig, JsonRoundTripAndDefaultsValidate) {
  const RunConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_NO_THROW(default_run_config().validate());
  RunConfig back = default_run_config();
  from_json(json(c), back);
  EXPECT_EQ(back, c);
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel) {
  RunConfig c = default_run_config();
  EXPECT_THROW(from_json(json{{"sed", 1}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"data", {{"train_per_klass", 1}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"stream", {{"severty", 5}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"adapt", {{"lamda", 1}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"model", {{"depth", 4}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"pretrain", {{"epoch", 4}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"variants", {{{"name", "a"}, {"rr", 1}}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"variants", {{{"method", "navia"}}}}}, c), ConfigError);
  EXPECT_THROW(from_json(json{{"seed", "zero"}}, c), ConfigError);
}

TEST(RunConfig, ValidateCatchesInconsistencies) {
  RunConfig c = tiny_config();
  c.data.config.num_classes = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.stream.images_per_corruption = 41;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.stream.corruptions = {"fog"};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.stream.severity = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.variants.push_back(c.variants[0]);
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.variants[0].method = "tent";
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.variants[2].r = 9;  // 17 tokens allow at most 8
  EXPECT_THROW(c.validate(), ScheduleError);
}

TEST(RunConfig, VariantOverridesAndPresets) {
  RunConfig c = tiny_config();
  const adapt::TTAConfig none = c.variant_config(c.variants[0]);
  EXPECT_FALSE(none.adapts());
  const adapt::TTAConfig norm = c.variant_config(c.variants[1]);
  EXPECT_EQ(norm.lr_delta, 0.0f);
  EXPECT_EQ(norm.lr_delta_l, 0.0f);
  EXPECT_EQ(norm.lr_norm, c.adapt.lr_norm);
  Variant deep{"deep", "navia", std::size_t{0}, std::string("deep")};
  const adapt::TTAConfig d = c.variant_config(deep);
  EXPECT_EQ(d.r, 0u);
  EXPECT_EQ(d.layer_set, adapt::LayerSet::kDeep);
  EXPECT_EQ(d.lr_delta, c.adapt.lr_delta);
}

TEST(RunConfig, LoadAppliesDefaultsAndSeedOverride) {
  const fs::path dir = temp_dir("load");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"seed": 7, "adapt": {"r": 2}})";
  }
  RunConfig c = load_run_config(dir / "c.json");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.adapt.r, 2u);
  EXPECT_EQ(c.model, default_run_config().model);
  EXPECT_EQ(c.adapt.lr_norm, default_run_config().adapt.lr_norm);
  {
    std::ofstream f(dir / "partial.json");
    f << R"({"model": {"num_layers": 4}, "adapt": {"l_bgt": 2}})";
  }
  const RunConfig partial = load_run_config(dir / "partial.json");
  EXPECT_EQ(partial.model.num_layers, 4u);
  EXPECT_EQ(partial.model.hidden_dim, default_run_config().model.hidden_dim);
  EXPECT_EQ(partial.adapt.r, default_run_config().adapt.r);
  set_seed(c, 11);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.pretrain.seed, 11u);
  EXPECT_EQ(c.adapt.seed, 11u);
  {
    std::ofstream f(dir / "bad.json");
    f << "{not json";
  }
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}

TEST(Seeds, SplitsAndStreamsAreDistinct) {
  const RunConfig c = tiny_config();
  EXPECT_NE(train_seed(c), test_seed(c));
  EXPECT_NE(test_seed(c), source_seed(c));
  EXPECT_NE(stream_seed(c, 0, 0), stream_seed(c, 1, 0));
  EXPECT_NE(stream_seed(c, 0, 0), stream_seed(c, 0, 1));
  RunConfig other = c;
  other.seed = 1;
  EXPECT_NE(train_seed(c), train_seed(other));
}

TEST(Stream, DeterministicBatchesOfConfiguredSize) {
  const RunConfig c = tiny_config();
  const auto a = make_stream(c, 0, 1);
  const auto b = make_stream(c, 0, 1);
  ASSERT_EQ(a.size(), 3u);  // 40 images in batches of 16
  EXPECT_EQ(a[0].images.dim(0), 16u);
  EXPECT_EQ(a[2].images.dim(0), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].images, b[i].images);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  EXPECT_FALSE(make_stream(c, 1, 1)[0].images == a[0].images);
}

TEST(Pipeline, AdaptWithoutStatsNamesTheStatsCommand) {
  const RunConfig c = tiny_config();
  const fs::path dir = temp_dir("nostats");
  cmd_gen_data(c, dir);
  cmd_pretrain(c, dir);
  try {
    cmd_adapt(c, dir);
    FAIL() << "expected StateError";
  } catch (const StateError& e) {
    EXPECT_NE(std::string(e.what()).find("etta stats"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Pipeline, CommandsCheckTheirInputs) {
  const RunConfig c = tiny_config();
  const fs::path dir = temp_dir("inputs");
  EXPECT_THROW(cmd_pretrain(c, dir), StateError);
  EXPECT_THROW(cmd_stats(c, dir), StateError);
  EXPECT_THROW(cmd_adapt(c, dir), StateError);
  EXPECT_THROW(cmd_report({dir}, dir / "report"), StateError);
  fs::remove_all(dir);
}

TEST(Pipeline, PretrainBelowThresholdFailsWithLog) {
  RunConfig c = tiny_config();
  c.min_test_accuracy = 1.0;
  const fs::path dir = temp_dir("threshold");
  cmd_gen_data(c, dir);
  EXPECT_THROW(cmd_pretrain(c, dir), ValidationError);
  EXPECT_TRUE(fs::exists(dir / "train_log.jsonl"));
  EXPECT_FALSE(fs::exists(checkpoint_path(dir)));
  fs::remove_all(dir);
}

TEST(Pipeline, PretrainIsReproducible) {
  const RunConfig c = tiny_config();
  const fs::path a = temp_dir("pre_a"), b = temp_dir("pre_b");
  cmd_gen_data(c, a);
  cmd_gen_data(c, b);
  EXPECT_EQ(slurp(train_path(a)), slurp(train_path(b)));
  cmd_pretrain(c, a);
  cmd_pretrain(c, b);
  EXPECT_EQ(slurp(checkpoint_path(a)), slurp(checkpoint_path(b)));
  EXPECT_EQ(slurp(a / "train_log.jsonl"), slurp(b / "train_log.jsonl"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, AdaptIsByteIdenticalAcrossRunsAndThreads) {
  const RunConfig c = tiny_config();
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  prepare(c, a);
  fs::copy(a, b, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  const std::size_t saved = worker_count();
  set_worker_count(1);
  cmd_adapt(c, a);
  set_worker_count(4);
  cmd_adapt(c, b);
  set_worker_count(saved);
  const std::string ja = slurp(metrics_path(a));
  EXPECT_FALSE(ja.empty());
  EXPECT_EQ(ja, slurp(metrics_path(b)));
  cmd_adapt(c, a);
  EXPECT_EQ(ja, slurp(metrics_path(a)));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, AdaptWritesRecordsSummaryAndResolvedConfig) {
  const RunConfig c = tiny_config();
  const fs::path dir = temp_dir("outputs");
  prepare(c, dir);
  const auto results = cmd_adapt(c, dir);
  // 2 seeds x 2 corruptions x 3 variants
  ASSERT_EQ(results.size(), 12u);

  std::ifstream in(metrics_path(dir));
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("variant"));
    EXPECT_TRUE(j.contains("corruption"));
    EXPECT_TRUE(j.contains("seed"));
    EXPECT_FALSE(j.contains("wall_ms"));
  }
  EXPECT_EQ(lines, 12u * 3u);  // three batches per stream

  const auto back = read_summary(summary_path(dir));
  ASSERT_EQ(back.size(), results.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].variant, results[i].variant);
    EXPECT_EQ(back[i].corruption, results[i].corruption);
    EXPECT_EQ(back[i].forward_passes, 3u);
    EXPECT_NEAR(back[i].accuracy, results[i].accuracy, 1e-6);
    EXPECT_GT(back[i].flops_ratio, 0.0);
    EXPECT_LE(back[i].flops_ratio, 1.0);
  }
  EXPECT_LT(results[0].flops_ratio, 1.0);

  const RunConfig reloaded = load_run_config(dir / "resolved_adapt.json");
  EXPECT_EQ(reloaded, c);
  for (const char* cmd : {"gen-data", "pretrain", "stats"}) {
    EXPECT_TRUE(fs::exists(dir / (std::string("resolved_") + cmd + ".json"))) << cmd;
  }
  fs::remove_all(dir);
}

TEST(Report, ThreeRowsPerCorruption) {
  const RunConfig c = tiny_config();
  const fs::path dir = temp_dir("report");
  prepare(c, dir);
  cmd_adapt(c, dir);
  const Report rep = cmd_report({dir}, dir / "report");
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.corruptions, c.stream.corruptions);
  EXPECT_EQ(rep.rows[0].variant, "noadapt");
  EXPECT_EQ(rep.rows[1].variant, "merge-only");
  EXPECT_EQ(rep.rows[2].variant, "navia");

  std::ifstream csv(dir / "report" / "report.csv");
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header, "corruption,variant,r,gflops,accuracy");
  std::size_t per_corruption[2] = {0, 0};
  while (std::getline(csv, line)) {
    if (line.rfind("gaussian_noise,", 0) == 0) ++per_corruption[0];
    if (line.rfind("contrast,", 0) == 0) ++per_corruption[1];
  }
  EXPECT_EQ(per_corruption[0], 3u);
  EXPECT_EQ(per_corruption[1], 3u);

  const std::string table = slurp(dir / "report" / "report.txt");
  EXPECT_NE(table.find("gaussian_noise"), std::string::npos);
  EXPECT_NE(table.find("Mean"), std::string::npos);
  const std::string svg = slurp(dir / "report" / "scatter.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_GT(std::count(svg.begin(), svg.end(), '\n'), 3);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Report, AveragesSeedsPerCorruption) {
  std::vector<RunResult> rs;
  auto add = [&](const char* v, const char* k, std::uint64_t s, double acc) {
    RunResult r;
    r.variant = v;
    r.corruption = k;
    r.seed = s;
    r.accuracy = acc;
    r.gflops = 0.5;
    rs.push_back(r);
  };
  add("a", "x", 0, 0.2);
  add("a", "x", 1, 0.4);
  add("a", "y", 0, 0.6);
  add("b", "x", 0, 1.0);
  add("b", "y", 0, 0.0);
  const Report rep = build_report(rs);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_NEAR(rep.rows[0].accuracy[0], 0.3, 1e-12);
  EXPECT_NEAR(rep.rows[0].accuracy[1], 0.6, 1e-12);
  EXPECT_NEAR(rep.rows[0].mean, 0.45, 1e-12);
  EXPECT_NEAR(rep.rows[1].mean, 0.5, 1e-12);
  std::ostringstream scatter;
  write_scatter_csv(rep, scatter);
  EXPECT_EQ(scatter.str(), "variant,r,gflops,mean_accuracy\na,0,0.5,0.450000\nb,0,0.5,0.500000\n");
}

TEST(Report, RejectsForeignSummaries) {
  const fs::path dir = temp_dir("foreign");
  {
    std::ofstream f(summary_path(dir));
    f << "a,b,c\n1,2,3\n";
  }
  EXPECT_THROW(read_summary(summary_path(dir)), FormatError);
  {
    std::ofstream f(summary_path(dir));
    f << "variant,method,r,corruption,seed,accuracy,mean_entropy,wall_ms,gflops,flops_ratio,"
         "forward_passes,batches\nnavia,navia,x,c,0,0.5,0,0,0,1,1,1\n";
  }
  EXPECT_THROW(read_summary(summary_path(dir)), FormatError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace etta::cli
