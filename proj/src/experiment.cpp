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


#include "etta/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "etta/errors.hpp"
#include "etta/flops.hpp"
#include "etta/rng.hpp"

namespace etta::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown " + where + " key '" + key + "'");
  }
}

// Keys present in `patch` replace those of `base`; the rest keep their
// current values.
template <typename T>
json overlay(const T& base, const json& patch) {
  if (!patch.is_object()) throw ConfigError("config section must be a JSON object");
  json merged = base;
  for (const auto& [key, value] : patch.items()) merged[key] = value;
  return merged;
}

json data_json(const DataSection& d) {
  return {{"image_size", d.config.image_size},
          {"num_classes", d.config.num_classes},
          {"train_per_class", d.train_per_class},
          {"test_per_class", d.test_per_class},
          {"source_images", d.source_images},
          {"corruption_table", d.corruption_table}};
}

DataSection data_from_json(const json& j, DataSection d) {
  reject_unknown(j, {"image_size", "num_classes", "train_per_class", "test_per_class",
                     "source_images", "corruption_table"},
                 "data config");
  if (j.contains("image_size")) d.config.image_size = j["image_size"].get<std::size_t>();
  if (j.contains("num_classes")) d.config.num_classes = j["num_classes"].get<std::size_t>();
  if (j.contains("train_per_class")) d.train_per_class = j["train_per_class"].get<std::size_t>();
  if (j.contains("test_per_class")) d.test_per_class = j["test_per_class"].get<std::size_t>();
  if (j.contains("source_images")) d.source_images = j["source_images"].get<std::size_t>();
  if (j.contains("corruption_table")) {
    d.corruption_table = j["corruption_table"].get<std::string>();
  }
  return d;
}

json stream_json(const StreamSection& s) {
  return {{"corruptions", s.corruptions},
          {"severity", s.severity},
          {"images_per_corruption", s.images_per_corruption},
          {"seeds", s.seeds}};
}

StreamSection stream_from_json(const json& j, StreamSection s) {
  reject_unknown(j, {"corruptions", "severity", "images_per_corruption", "seeds"},
                 "stream config");
  if (j.contains("corruptions")) s.corruptions = j["corruptions"].get<std::vector<std::string>>();
  if (j.contains("severity")) s.severity = j["severity"].get<int>();
  if (j.contains("images_per_corruption")) {
    s.images_per_corruption = j["images_per_corruption"].get<std::size_t>();
  }
  if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  return s;
}

json variant_json(const Variant& v) {
  json j = {{"name", v.name}, {"method", v.method}};
  if (v.r) j["r"] = *v.r;
  if (v.layer_set) j["layer_set"] = *v.layer_set;
  return j;
}

Variant variant_from_json(const json& j) {
  reject_unknown(j, {"name", "method", "r", "layer_set"}, "variant");
  Variant v;
  if (!j.contains("name")) throw ConfigError("variant without a name");
  v.name = j["name"].get<std::string>();
  if (j.contains("method")) v.method = j["method"].get<std::string>();
  if (j.contains("r")) v.r = j["r"].get<std::size_t>();
  if (j.contains("layer_set")) v.layer_set = j["layer_set"].get<std::string>();
  return v;
}

const data::CorruptionTable& table_of(const RunConfig& c, data::CorruptionTable& storage) {
  if (c.data.corruption_table.empty()) return data::default_corruption_table();
  storage = data::load_corruption_table(c.data.corruption_table);
  return storage;
}

std::vector<adapt::Batch> to_batches(const data::Dataset& d, std::size_t batch_size) {
  std::vector<adapt::Batch> out;
  for (std::size_t b = 0; b < d.size(); b += batch_size) {
    data::Dataset part = d.slice(b, std::min(d.size(), b + batch_size));
    out.push_back({std::move(part.images), std::move(part.labels)});
  }
  return out;
}

bool needs_stats(const adapt::TTAConfig& cfg) { return cfg.adapts() && cfg.lambda > 0.0f; }

void append_line(std::ofstream& out, const std::string& line) { out << line << '\n'; }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void emit(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  data.config.validate();
  pretrain.validate();
  if (data.config.num_classes != model.num_classes) {
    throw ConfigError("data.num_classes (" + std::to_string(data.config.num_classes) +
                      ") differs from model.num_classes (" +
                      std::to_string(model.num_classes) + ")");
  }
  if (data.config.image_size != model.image_size) {
    throw ConfigError("data.image_size differs from model.image_size");
  }
  if (data.train_per_class == 0 || data.test_per_class == 0) {
    throw ConfigError("data splits must be non-empty");
  }
  if (data.source_images < 2) throw ConfigError("data.source_images must be at least 2");
  if (!(min_test_accuracy >= 0.0 && min_test_accuracy <= 1.0)) {
    throw ConfigError("min_test_accuracy must lie in [0, 1]");
  }
  adapt.validate(model);
  if (stream.corruptions.empty()) throw ConfigError("stream.corruptions is empty");
  for (const auto& name : stream.corruptions) data::parse_corruption(name);
  if (stream.severity < 1 || stream.severity > 5) {
    throw ConfigError("stream.severity must be 1..5");
  }
  if (stream.images_per_corruption == 0 ||
      stream.images_per_corruption % data.config.num_classes != 0) {
    throw ConfigError("stream.images_per_corruption must be a positive multiple of the class count");
  }
  if (stream.seeds.empty()) throw ConfigError("stream.seeds is empty");
  std::set<std::string> names;
  for (const auto& v : variants) {
    if (v.name.empty() || v.name.find_first_of(",\n\"") != std::string::npos) {
      throw ConfigError("variant name '" + v.name + "' must be non-empty, without commas or quotes");
    }
    if (!names.insert(v.name).second) throw ConfigError("duplicate variant '" + v.name + "'");
    const adapt::TTAConfig cfg = variant_config(v);
    cfg.validate(model);
    if (cfg.r > agg::max_merge(model.seq_len())) {
      throw ScheduleError("variant '" + v.name + "': r=" + std::to_string(cfg.r) +
                          " exceeds the merge capacity of " + std::to_string(model.seq_len()) +
                          " tokens");
    }
  }
}

adapt::TTAConfig RunConfig::variant_config(const Variant& v) const {
  adapt::TTAConfig base = adapt;
  if (v.r) base.r = *v.r;
  if (v.layer_set) base.layer_set = adapt::parse_layer_set(*v.layer_set);
  return adapt::method_config(v.method, base);
}

void to_json(json& j, const RunConfig& c) {
  json variants = json::array();
  for (const auto& v : c.variants) variants.push_back(variant_json(v));
  j = {{"seed", c.seed},
       {"model", c.model},
       {"data", data_json(c.data)},
       {"pretrain", c.pretrain},
       {"min_test_accuracy", c.min_test_accuracy},
       {"adapt", c.adapt},
       {"stream", stream_json(c.stream)},
       {"variants", variants}};
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j, {"seed", "model", "data", "pretrain", "min_test_accuracy", "adapt", "stream",
                     "variants"},
                 "run config");
  RunConfig out = c;
  try {
    if (j.contains("seed")) out.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("model")) out.model = overlay(out.model, j["model"]).get<vit::ViTConfig>();
    if (j.contains("data")) out.data = data_from_json(j["data"], out.data);
    if (j.contains("pretrain")) {
      out.pretrain = overlay(out.pretrain, j["pretrain"]).get<train::PretrainConfig>();
    }
    if (j.contains("min_test_accuracy")) {
      out.min_test_accuracy = j["min_test_accuracy"].get<double>();
    }
    if (j.contains("adapt")) out.adapt = overlay(out.adapt, j["adapt"]).get<adapt::TTAConfig>();
    if (j.contains("stream")) out.stream = stream_from_json(j["stream"], out.stream);
    if (j.contains("variants")) {
      if (!j["variants"].is_array()) throw ConfigError("variants must be an array");
      out.variants.clear();
      for (const auto& v : j["variants"]) out.variants.push_back(variant_from_json(v));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c = std::move(out);
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.image_size = 32;
  c.model.patch_size = 4;
  c.model.hidden_dim = 32;
  c.model.num_layers = 6;
  c.model.num_heads = 2;
  c.model.mlp_ratio = 4;
  c.model.num_classes = 10;
  c.adapt.r = 4;  // 1/16 of the 65-token sequence
  c.variants = {{"noadapt", "noadapt", {}, {}},
                {"normtune", "normtune", {}, {}},
                {"navia", "navia", {}, {}}};
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  RunConfig c = default_run_config();
  from_json(j, c);
  c.validate();
  return c;
}

void set_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.pretrain.seed = seed;
  c.adapt.seed = seed;
}

void write_resolved_config(const RunConfig& c, const fs::path& out_dir,
                           const std::string& command) {
  fs::create_directories(out_dir);
  std::ofstream out = open_out(out_dir / ("resolved_" + command + ".json"));
  out << json(c).dump(2) << '\n';
}

std::uint64_t train_seed(const RunConfig& c) { return Rng::mix(c.seed, 1); }
std::uint64_t test_seed(const RunConfig& c) { return Rng::mix(c.seed, 2); }
std::uint64_t source_seed(const RunConfig& c) { return Rng::mix(c.seed, 3); }
std::uint64_t stream_seed(const RunConfig& c, std::uint64_t stream, std::size_t corruption) {
  return Rng::mix(Rng::mix(Rng::mix(c.seed, 4), stream), corruption);
}

fs::path train_path(const fs::path& dir) { return dir / "train.etta"; }
fs::path test_path(const fs::path& dir) { return dir / "test.etta"; }
fs::path source_path(const fs::path& dir) { return dir / "source.etta"; }
fs::path checkpoint_path(const fs::path& dir) { return dir / "model.ckpt"; }
fs::path stats_path(const fs::path& dir, std::size_t r) {
  return dir / ("stats_r" + std::to_string(r) + ".bin");
}
fs::path metrics_path(const fs::path& dir) { return dir / "metrics.jsonl"; }
fs::path summary_path(const fs::path& dir) { return dir / "summary.csv"; }

void cmd_gen_data(const RunConfig& c, const fs::path& out, const Log& log) {
  c.validate();
  fs::create_directories(out);
  write_resolved_config(c, out, "gen-data");
  const std::size_t classes = c.data.config.num_classes;
  const data::Dataset train = data::gen_dataset(c.data.train_per_class, c.data.config, train_seed(c));
  data::export_dataset(train, train_path(out));
  const data::Dataset test = data::gen_dataset(c.data.test_per_class, c.data.config, test_seed(c));
  data::export_dataset(test, test_path(out));
  const std::size_t per_class = (c.data.source_images + classes - 1) / classes;
  const data::Dataset source =
      data::gen_dataset(per_class, c.data.config, source_seed(c)).slice(0, c.data.source_images);
  data::export_dataset(source, source_path(out));
  emit(log, "wrote " + std::to_string(train.size()) + " train, " + std::to_string(test.size()) +
                " test and " + std::to_string(source.size()) + " source images");

  data::CorruptionTable storage;
  const data::CorruptionTable& table = table_of(c, storage);
  const data::Dataset preview = test.slice(0, std::min<std::size_t>(8, test.size()));
  data::write_ppm_strip(preview, preview.size(), out / "preview_clean.ppm");
  for (std::size_t k = 0; k < c.stream.corruptions.size(); ++k) {
    const auto kind = data::parse_corruption(c.stream.corruptions[k]);
    const data::Dataset shifted =
        data::corrupt_dataset(preview, kind, c.stream.severity, stream_seed(c, 0, k), table);
    data::write_ppm_strip(shifted, shifted.size(),
                          out / ("preview_" + c.stream.corruptions[k] + ".ppm"));
  }
}

PretrainSummary cmd_pretrain(const RunConfig& c, const fs::path& out, const Log& log) {
  c.validate();
  if (!fs::exists(train_path(out)) || !fs::exists(test_path(out))) {
    throw StateError("no generated dataset in " + out.string() + "; run `etta gen-data` first");
  }
  write_resolved_config(c, out, "pretrain");
  const data::Dataset train = data::ingest_raw(train_path(out), c.data.config);
  const data::Dataset test = data::ingest_raw(test_path(out), c.data.config);

  std::ofstream train_log = open_out(out / "train_log.jsonl");
  auto on_epoch = [&](const train::EpochLog& e) {
    append_line(train_log, train::epoch_json(e).dump());
    train_log.flush();
    emit(log, "epoch " + std::to_string(e.epoch) + " loss " + fixed(e.loss, 4) + " train acc " +
                  fixed(e.train_accuracy, 4));
  };
  train::PretrainResult result;
  try {
    result = train::pretrain(c.model, train, c.pretrain, on_epoch);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) + " (training log: " +
                          (out / "train_log.jsonl").string() + ")");
  }
  PretrainSummary s;
  s.train_accuracy = result.train_accuracy;
  s.test_accuracy = train::evaluate_accuracy(result.params, test, vit::MergeConfig{});
  s.epochs = result.log.size();
  std::ofstream summary = open_out(out / "pretrain.json");
  summary << json{{"train_accuracy", s.train_accuracy},
                  {"test_accuracy", s.test_accuracy},
                  {"epochs", s.epochs}}
                 .dump(2)
          << '\n';
  emit(log, "train acc " + fixed(s.train_accuracy, 4) + ", test acc " + fixed(s.test_accuracy, 4));
  if (s.test_accuracy < c.min_test_accuracy) {
    throw ValidationError("clean test accuracy " + fixed(s.test_accuracy, 4) + " is below " +
                          fixed(c.min_test_accuracy, 4) + "; no checkpoint written");
  }
  vit::save_checkpoint(result.params, checkpoint_path(out));
  return s;
}

void cmd_stats(const RunConfig& c, const fs::path& out, const Log& log) {
  c.validate();
  if (!fs::exists(checkpoint_path(out))) {
    throw StateError("no checkpoint in " + out.string() + "; run `etta pretrain` first");
  }
  if (!fs::exists(source_path(out))) {
    throw StateError("no source sample in " + out.string() + "; run `etta gen-data` first");
  }
  write_resolved_config(c, out, "stats");
  const vit::ViTParams params = vit::load_checkpoint(checkpoint_path(out), c.model);
  const data::Dataset source = data::ingest_raw(source_path(out), c.data.config);
  std::set<std::size_t> rs{c.adapt.r};
  for (const auto& v : c.variants) rs.insert(c.variant_config(v).r);
  for (std::size_t r : rs) {
    const adapt::SourceStats stats =
        adapt::compute_source_stats(params, source.images, vit::MergeConfig{r}, c.adapt.batch_size);
    adapt::save_source_stats(stats, c.model, stats_path(out, r));
    emit(log, "wrote " + stats_path(out, r).string());
  }
}

std::vector<adapt::Batch> make_stream(const RunConfig& c, std::uint64_t stream,
                                      std::size_t corruption) {
  data::CorruptionTable storage;
  const data::CorruptionTable& table = table_of(c, storage);
  const std::size_t per_class = c.stream.images_per_corruption / c.data.config.num_classes;
  const data::Dataset clean = data::gen_dataset(per_class, c.data.config, stream_seed(c, stream, 0));
  const auto kind = data::parse_corruption(c.stream.corruptions.at(corruption));
  const data::Dataset shifted = data::corrupt_dataset(
      clean, kind, c.stream.severity, stream_seed(c, stream, corruption + 1), table);
  return to_batches(shifted, c.adapt.batch_size);
}

std::vector<RunResult> cmd_adapt(const RunConfig& c, const fs::path& out, const Log& log) {
  c.validate();
  if (c.variants.empty()) throw ConfigError("no variants to run");
  if (!fs::exists(checkpoint_path(out))) {
    throw StateError("no checkpoint in " + out.string() + "; run `etta pretrain` first");
  }
  const vit::ViTParams params = vit::load_checkpoint(checkpoint_path(out), c.model);

  std::map<std::size_t, adapt::SourceStats> stats;
  for (const auto& v : c.variants) {
    const adapt::TTAConfig cfg = c.variant_config(v);
    if (!needs_stats(cfg) || stats.count(cfg.r)) continue;
    const fs::path p = stats_path(out, cfg.r);
    if (!fs::exists(p)) {
      throw StateError("variant '" + v.name + "' needs source statistics " + p.string() +
                       "; run `etta stats` with this config first");
    }
    stats.emplace(cfg.r, adapt::load_source_stats(p, c.model));
  }
  write_resolved_config(c, out, "adapt");

  std::ofstream metrics = open_out(metrics_path(out));
  std::vector<RunResult> results;
  for (std::uint64_t seed : c.stream.seeds) {
    for (std::size_t k = 0; k < c.stream.corruptions.size(); ++k) {
      const std::vector<adapt::Batch> stream = make_stream(c, seed, k);
      for (const auto& v : c.variants) {
        const adapt::TTAConfig cfg = c.variant_config(v);
        const adapt::SourceStats* s = needs_stats(cfg) ? &stats.at(cfg.r) : nullptr;
        const flops::FlopsReport cost = flops::cmd_flops(c.model, cfg.r);
        vit::AdaptState state = adapt::make_state(params, cfg);
        const auto t0 = std::chrono::steady_clock::now();
        const adapt::StreamSummary summary = adapt::evaluate_stream(
            stream, params, state, s, cfg, [&](const adapt::StepResult& step) {
              json j = adapt::metrics_json(step.record);
              j["variant"] = v.name;
              j["corruption"] = c.stream.corruptions[k];
              j["seed"] = seed;
              append_line(metrics, j.dump());
            });
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        RunResult r;
        r.variant = v.name;
        r.method = v.method;
        r.r = cfg.r;
        r.corruption = c.stream.corruptions[k];
        r.seed = seed;
        r.accuracy = summary.accuracy;
        double ent = 0.0;
        for (const auto& rec : summary.records) ent += rec.entropy * double(rec.count);
        r.mean_entropy = summary.total ? ent / double(summary.total) : 0.0;
        r.wall_ms = ms;
        r.gflops = cost.gflops();
        r.flops_ratio = cost.ratio;
        r.forward_passes = summary.forward_passes;
        r.batches = summary.records.size();
        results.push_back(r);
        emit(log, v.name + " " + r.corruption + " seed " + std::to_string(seed) + " acc " +
                      fixed(r.accuracy, 4));
      }
    }
  }

  std::ofstream csv = open_out(summary_path(out));
  csv << "variant,method,r,corruption,seed,accuracy,mean_entropy,wall_ms,gflops,flops_ratio,"
         "forward_passes,batches\n";
  for (const auto& r : results) {
    csv << r.variant << ',' << r.method << ',' << r.r << ',' << r.corruption << ',' << r.seed
        << ',' << fixed(r.accuracy, 6) << ',' << fixed(r.mean_entropy, 6) << ','
        << fixed(r.wall_ms, 1) << ',' << std::setprecision(9) << r.gflops << ','
        << fixed(r.flops_ratio, 6) << ',' << r.forward_passes << ',' << r.batches << '\n';
  }
  return results;
}

std::vector<RunResult> read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read summary " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("variant,method,r,corruption,seed,accuracy", 0) != 0) {
    throw FormatError(path.string() + " is not an adaptation summary");
  }
  std::vector<RunResult> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 12) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 12 fields");
    }
    try {
      RunResult r;
      r.variant = f[0];
      r.method = f[1];
      r.r = std::stoul(f[2]);
      r.corruption = f[3];
      r.seed = std::stoull(f[4]);
      r.accuracy = std::stod(f[5]);
      r.mean_entropy = std::stod(f[6]);
      r.wall_ms = std::stod(f[7]);
      r.gflops = std::stod(f[8]);
      r.flops_ratio = std::stod(f[9]);
      r.forward_passes = std::stoull(f[10]);
      r.batches = std::stoul(f[11]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

Report build_report(const std::vector<RunResult>& results) {
  Report rep;
  std::vector<std::string> variants;
  for (const auto& r : results) {
    if (std::find(rep.corruptions.begin(), rep.corruptions.end(), r.corruption) ==
        rep.corruptions.end()) {
      rep.corruptions.push_back(r.corruption);
    }
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
      variants.push_back(r.variant);
    }
  }
  for (const auto& name : variants) {
    ReportRow row;
    row.variant = name;
    std::vector<double> sum(rep.corruptions.size(), 0.0);
    std::vector<std::size_t> n(rep.corruptions.size(), 0);
    for (const auto& r : results) {
      if (r.variant != name) continue;
      row.r = r.r;
      row.gflops = r.gflops;
      const std::size_t k =
          std::find(rep.corruptions.begin(), rep.corruptions.end(), r.corruption) -
          rep.corruptions.begin();
      sum[k] += r.accuracy;
      ++n[k];
    }
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < sum.size(); ++k) {
      const double a = n[k] ? sum[k] / double(n[k]) : std::numeric_limits<double>::quiet_NaN();
      row.accuracy.push_back(a);
      if (n[k]) {
        total += a;
        ++present;
      }
    }
    row.mean = present ? total / double(present) : std::numeric_limits<double>::quiet_NaN();
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void write_report_table(const Report& report, std::ostream& out) {
  std::size_t name_w = 7;
  for (const auto& row : report.rows) name_w = std::max(name_w, row.variant.size());
  std::vector<std::size_t> col_w;
  for (const auto& c : report.corruptions) col_w.push_back(std::max<std::size_t>(6, c.size()));
  auto line = [&] {
    std::size_t w = name_w + 4 + 11;
    for (std::size_t cw : col_w) w += cw + 2;
    w += 8;
    out << std::string(w, '-') << '\n';
  };
  out << std::left << std::setw(int(name_w)) << "Variant" << std::right << std::setw(4) << "r"
      << std::setw(11) << "GFLOPs";
  for (std::size_t k = 0; k < report.corruptions.size(); ++k) {
    out << "  " << std::setw(int(col_w[k])) << report.corruptions[k];
  }
  out << "  " << std::setw(6) << "Mean" << '\n';
  line();
  for (const auto& row : report.rows) {
    out << std::left << std::setw(int(name_w)) << row.variant << std::right << std::setw(4)
        << row.r << std::setw(11) << fixed(row.gflops, 6);
    for (std::size_t k = 0; k < row.accuracy.size(); ++k) {
      out << "  " << std::setw(int(col_w[k])) << fixed(100.0 * row.accuracy[k], 1);
    }
    out << "  " << std::setw(6) << fixed(100.0 * row.mean, 1) << '\n';
  }
  out << std::left;
}

void write_report_csv(const Report& report, std::ostream& out) {
  out << "corruption,variant,r,gflops,accuracy\n";
  for (std::size_t k = 0; k < report.corruptions.size(); ++k) {
    for (const auto& row : report.rows) {
      out << report.corruptions[k] << ',' << row.variant << ',' << row.r << ','
          << std::setprecision(9) << row.gflops << ',' << fixed(row.accuracy[k], 6) << '\n';
    }
  }
}

void write_scatter_csv(const Report& report, std::ostream& out) {
  out << "variant,r,gflops,mean_accuracy\n";
  for (const auto& row : report.rows) {
    out << row.variant << ',' << row.r << ',' << std::setprecision(9) << row.gflops << ','
        << fixed(row.mean, 6) << '\n';
  }
}

void write_scatter_svg(const Report& report, std::ostream& out) {
  const double w = 480, h = 360, left = 60, right = 20, top = 20, bottom = 50;
  double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
  double amin = gmin, amax = -gmin;
  for (const auto& row : report.rows) {
    gmin = std::min(gmin, row.gflops);
    gmax = std::max(gmax, row.gflops);
    amin = std::min(amin, row.mean);
    amax = std::max(amax, row.mean);
  }
  if (report.rows.empty()) gmin = gmax = amin = amax = 0.0;
  const double gpad = std::max(1e-9, 0.1 * (gmax - gmin)), apad = std::max(0.01, 0.1 * (amax - amin));
  gmin -= gpad;
  gmax += gpad;
  amin -= apad;
  amax += apad;
  auto sx = [&](double g) { return left + (g - gmin) / (gmax - gmin) * (w - left - right); };
  auto sy = [&](double a) { return h - bottom - (a - amin) / (amax - amin) * (h - top - bottom); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right
      << "\" y2=\"" << h - bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << h - bottom << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\">GFLOPs per image</text>\n";
  out << "<text x=\"14\" y=\"" << (top + h - bottom) / 2 << "\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 14 " << (top + h - bottom) / 2
      << ")\">mean accuracy (%)</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double g = gmin + (gmax - gmin) * t / 4.0, a = amin + (amax - amin) * t / 4.0;
    out << "<text x=\"" << sx(g) << "\" y=\"" << h - bottom + 14 << "\" text-anchor=\"middle\">"
        << fixed(g, 5) << "</text>\n";
    out << "<text x=\"" << left - 4 << "\" y=\"" << sy(a) + 4 << "\" text-anchor=\"end\">"
        << fixed(100.0 * a, 1) << "</text>\n";
  }
  for (const auto& row : report.rows) {
    out << "<circle cx=\"" << sx(row.gflops) << "\" cy=\"" << sy(row.mean)
        << "\" r=\"4\" fill=\"steelblue\"/>\n";
    out << "<text x=\"" << sx(row.gflops) + 6 << "\" y=\"" << sy(row.mean) - 6 << "\">"
        << row.variant << "</text>\n";
  }
  out << "</svg>\n";
}

Report cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<RunResult> all;
  for (const auto& dir : run_dirs) {
    const fs::path p = summary_path(dir);
    if (!fs::exists(p)) {
      throw StateError("no summary in " + dir.string() + "; run `etta adapt` there first");
    }
    const auto part = read_summary(p);
    all.insert(all.end(), part.begin(), part.end());
  }
  const Report rep = build_report(all);
  fs::create_directories(out);
  {
    std::ofstream f = open_out(out / "report.txt");
    write_report_table(rep, f);
  }
  {
    std::ofstream f = open_out(out / "report.csv");
    write_report_csv(rep, f);
  }
  {
    std::ofstream f = open_out(out / "scatter.csv");
    write_scatter_csv(rep, f);
  }
  {
    std::ofstream f = open_out(out / "scatter.svg");
    write_scatter_svg(rep, f);
  }
  return rep;
}

}  // namespace etta::cli
