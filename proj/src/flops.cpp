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


#include "etta/flops.hpp"

#include <string>

#include "etta/errors.hpp"
#include "etta/tokenagg.hpp"

namespace etta::flops {

namespace {

std::uint64_t layers_total(const std::vector<LayerCost>& layers) {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.total();
  return s;
}

std::vector<LayerCost> layer_costs(const vit::ViTConfig& c, std::size_t r) {
  const std::uint64_t d = c.hidden_dim, hidden = c.mlp_dim();
  std::vector<LayerCost> out;
  for (std::size_t n : vit::token_schedule(c, r)) {
    const std::size_t removed = r > 0 && r <= agg::max_merge(n) ? r : 0;
    LayerCost l;
    l.tokens_attn = n;
    l.tokens_mlp = n - removed;
    const std::uint64_t na = n, nm = l.tokens_mlp;
    l.qkv = 3 * na * d * d;
    l.qk = na * na * d;
    l.av = na * na * d;
    l.proj = na * d * d;
    l.mlp = 2 * nm * d * hidden;
    out.push_back(l);
  }
  return out;
}

}  // namespace

vit::ViTConfig vit_b16_config() {
  vit::ViTConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.channels = 3;
  c.hidden_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.mlp_ratio = 4;
  c.num_classes = 1000;
  return c;
}

FlopsReport cmd_flops(const vit::ViTConfig& config, std::size_t r) {
  config.validate();
  if (r > agg::max_merge(config.seq_len())) {
    throw ScheduleError("r=" + std::to_string(r) + " exceeds the " +
                        std::to_string(agg::max_merge(config.seq_len())) +
                        " tokens the first layer can merge");
  }
  FlopsReport rep;
  rep.config = config;
  rep.r = r;
  rep.patch_embed = std::uint64_t(config.num_patches()) * config.patch_dim() * config.hidden_dim;
  rep.head = std::uint64_t(config.hidden_dim) * config.num_classes;
  rep.layers = layer_costs(config, r);
  rep.total_macs = rep.patch_embed + rep.head + layers_total(rep.layers);
  rep.baseline_macs = rep.patch_embed + rep.head + layers_total(layer_costs(config, 0));
  rep.ratio = static_cast<double>(rep.total_macs) / static_cast<double>(rep.baseline_macs);
  return rep;
}

nlohmann::json report_json(const FlopsReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"tokens_attn", l.tokens_attn},
                      {"tokens_mlp", l.tokens_mlp},
                      {"qkv", l.qkv},
                      {"qk", l.qk},
                      {"av", l.av},
                      {"proj", l.proj},
                      {"mlp", l.mlp},
                      {"total", l.total()}});
  }
  return {{"config", report.config},
          {"r", report.r},
          {"patch_embed", report.patch_embed},
          {"head", report.head},
          {"layers", layers},
          {"total_macs", report.total_macs},
          {"baseline_macs", report.baseline_macs},
          {"gmacs", report.gmacs()},
          {"gflops", report.gflops()},
          {"ratio", report.ratio}};
}

}  // namespace etta::flops
