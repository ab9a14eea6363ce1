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
#include <vector>

#include "json.hpp"

#include "etta/vit.hpp"

namespace etta::flops {

// Multiply-accumulate counts for one block. Attention runs on the layer's
// input length, the MLP on the length after merging.
struct LayerCost {
  std::size_t tokens_attn = 0;
  std::size_t tokens_mlp = 0;
  std::uint64_t qkv = 0;
  std::uint64_t qk = 0;
  std::uint64_t av = 0;
  std::uint64_t proj = 0;
  std::uint64_t mlp = 0;

  std::uint64_t total() const { return qkv + qk + av + proj + mlp; }
};

struct FlopsReport {
  vit::ViTConfig config;
  std::size_t r = 0;
  std::uint64_t patch_embed = 0;
  std::uint64_t head = 0;
  std::vector<LayerCost> layers;
  std::uint64_t total_macs = 0;     // with merging at r
  std::uint64_t baseline_macs = 0;  // same model at r = 0
  double ratio = 1.0;               // total_macs / baseline_macs

  double gmacs() const { return static_cast<double>(total_macs) * 1e-9; }
  // FLOPs counted as two per multiply-accumulate.
  double gflops() const { return 2.0 * gmacs(); }
};

// ViT-B/16 at 224 px with 1000 classes.
vit::ViTConfig vit_b16_config();

// Analytic cost of one image. Layers that can no longer drop r tokens keep
// their length, as in the model's forward pass. Throws ScheduleError when
// even the first layer cannot merge r tokens.
FlopsReport cmd_flops(const vit::ViTConfig& config, std::size_t r);

nlohmann::json report_json(const FlopsReport& report);

}  // namespace etta::flops
