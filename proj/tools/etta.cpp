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


#include <malloc.h>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "etta/errors.hpp"
#include "etta/experiment.hpp"
#include "etta/flops.hpp"

namespace fs = std::filesystem;
using namespace etta;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Run config (JSON); defaults apply when omitted");
  sub->add_option("--seed", c.seed, "Override the run seed");
  sub->add_option("--out", c.out, "Run directory")->capture_default_str();
}

cli::RunConfig resolve(const Common& c) {
  cli::RunConfig cfg = c.config.empty() ? cli::default_run_config() : cli::load_run_config(c.config);
  if (c.seed) cli::set_seed(cfg, *c.seed);
  cfg.validate();
  return cfg;
}

void say(const std::string& msg) { std::cerr << msg << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  // Keep freed tensor buffers in the heap instead of returning them to the OS.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Efficient test-time adaptation of token-merging vision transformers"};
  app.require_subcommand(1);

  Common gen, pre, stats, adapt;
  add_common(app.add_subcommand("gen-data", "Generate the synthetic splits"), gen);
  add_common(app.add_subcommand("pretrain", "Train the source model"), pre);
  add_common(app.add_subcommand("stats", "Collect source [CLS] statistics"), stats);
  add_common(app.add_subcommand("adapt", "Run every variant over the corrupted streams"), adapt);

  Common fl;
  std::size_t r = 0;
  bool vit_b16 = false;
  CLI::App* flops_cmd = app.add_subcommand("flops", "Analytic MAC/FLOP count");
  add_common(flops_cmd, fl);
  flops_cmd->add_option("-r,--r", r, "Tokens merged per layer")->capture_default_str();
  flops_cmd->add_flag("--vit-b16", vit_b16, "Use the ViT-B/16 ImageNet shape instead of the config model");

  std::vector<std::string> runs;
  std::string report_out = "report";
  CLI::App* report_cmd = app.add_subcommand("report", "Aggregate run summaries");
  report_cmd->add_option("runs", runs, "Run directories")->required();
  report_cmd->add_option("--out", report_out, "Report directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-data")) {
      cli::cmd_gen_data(resolve(gen), gen.out, say);
    } else if (app.got_subcommand("pretrain")) {
      cli::cmd_pretrain(resolve(pre), pre.out, say);
    } else if (app.got_subcommand("stats")) {
      cli::cmd_stats(resolve(stats), stats.out, say);
    } else if (app.got_subcommand("adapt")) {
      cli::cmd_adapt(resolve(adapt), adapt.out, say);
    } else if (app.got_subcommand("flops")) {
      const vit::ViTConfig model = vit_b16 ? flops::vit_b16_config() : resolve(fl).model;
      const std::string text = flops::report_json(flops::cmd_flops(model, r)).dump(2);
      std::cout << text << '\n';
      if (flops_cmd->count("--out")) {
        fs::create_directories(fl.out);
        std::ofstream(fs::path(fl.out) / ("flops_r" + std::to_string(r) + ".json")) << text << '\n';
      }
    } else if (app.got_subcommand("report")) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      const cli::Report rep = cli::cmd_report(dirs, report_out);
      cli::write_report_table(rep, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "etta: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
