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

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "etta/kernels.hpp"
#include "etta/tensor.hpp"
#include "etta/tokenagg.hpp"

namespace etta::vit {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 8;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 10;
  float ln_eps = kLayerNormEps;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t head_dim() const { return hidden_dim / num_heads; }
  std::size_t mlp_dim() const { return mlp_ratio * hidden_dim; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }

  // Throws ConfigError when the geometry is inconsistent.
  void validate() const;

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct BlockParams {
  LayerNormParams ln1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // weights stored [in, out]
  LayerNormParams ln2;
  Tensor w_fc1, b_fc1, w_fc2, b_fc2;
};

struct ViTParams {
  ViTConfig config;
  Tensor patch_w;        // [patch_dim, d]
  Tensor patch_b;        // [d]
  Tensor pos_embed;      // [N+1, d]
  Tensor cls_embedding;  // [d], the single pre-trained [CLS] token
  std::vector<BlockParams> blocks;
  LayerNormParams final_ln;
  Tensor head_w;  // [d, C]
  Tensor head_b;  // [C]

  // Visits every tensor with its checkpoint name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

// Zero-filled parameters with the shapes implied by `config`
// (LayerNorm gammas set to one).
ViTParams zero_params(const ViTConfig& config);
// Truncated-normal style initialization (std 0.02) for training from scratch.
ViTParams init_params(const ViTConfig& config, std::uint64_t seed);

// LayerNorm index helpers: 2l is ln1 of block l, 2l+1 is ln2, 2L is the
// final norm.
inline std::size_t ln1_index(std::size_t layer) { return 2 * layer; }
inline std::size_t ln2_index(std::size_t layer) { return 2 * layer + 1; }
inline std::size_t final_ln_index(std::size_t num_layers) { return 2 * num_layers; }
std::vector<LayerNormParams> copy_norms(const ViTParams& params);
void write_norms(ViTParams& params, const std::vector<LayerNormParams>& norms);

// All state that test-time adaptation may change: live LayerNorm affines,
// the [CLS] embedding offset delta, the per-layer [CLS] biases delta_l for
// l in L_aug, and SGD momentum for each of them.
struct AdaptState {
  std::vector<LayerNormParams> norms;
  Tensor delta;
  std::map<std::size_t, Tensor> layer_bias;

  std::vector<LayerNormParams> norm_momentum;
  Tensor delta_momentum;
  std::map<std::size_t, Tensor> bias_momentum;
  std::int64_t step = 0;

  std::vector<std::size_t> aug_layers() const;
  const Tensor* bias_for(std::size_t layer) const;
};

// Fresh state for `params` with biases on `aug_layers` (any subset of
// 0..L-1). delta, every delta_l and all momenta start at exactly zero.
AdaptState make_adapt_state(const ViTParams& params, const std::vector<std::size_t>& aug_layers);

struct MergeConfig {
  std::size_t r = 0;  // tokens removed per layer; 0 disables aggregation
};

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct PatchEmbedCache {
  Tensor patches;  // [B, N, patch_dim]
};

// images [B, C, H, W] -> tokens [B, N+1, d] with unit sizes.
agg::TokenBatch patch_embed(const Tensor& images, const ViTParams& params,
                            const AdaptState& state, PatchEmbedCache* cache = nullptr);

struct BlockCache {
  std::size_t layer = 0;
  std::size_t batch = 0;
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  bool merged = false;
  Tensor sizes_in;   // [B, n_in]
  Tensor xhat1;      // [B, n_in, d]
  Tensor rstd1;      // [B*n_in]
  Tensor h1;         // [B, n_in, d]
  Tensor q, k, v;    // [B, n_in, d]
  Tensor attn;       // [B, H, n_in, n_in]
  Tensor attn_out;   // [B, n_in, d] (heads concatenated)
  std::vector<agg::MergePlan> plans;
  Tensor xhat2;      // [B, n_out, d]
  Tensor rstd2;      // [B*n_out]
  Tensor h2;         // [B, n_out, d]
  Tensor f1;         // [B, n_out, mlp]
  Tensor g;          // [B, n_out, mlp]
};

struct BlockOutput {
  agg::TokenBatch out;
  BlockCache cache;
};

// One pre-norm encoder block. Adds delta_layer to the [CLS] row at block
// input when the state carries one, merges `r` tokens between MHSA and FFN
// (ScheduleError if r > (n-1)/2), and uses proportional attention.
BlockOutput block_forward(const agg::TokenBatch& input, std::size_t layer_idx,
                          const ViTParams& params, const AdaptState& state, std::size_t r);

struct ForwardTrace {
  std::uint64_t pass_id = 0;
  ViTConfig config;
  std::vector<std::size_t> aug_layers;
  std::size_t batch = 0;
  PatchEmbedCache embed;
  std::vector<BlockCache> blocks;
  std::vector<Tensor> cls_features;      // per layer, block-output [CLS] rows [B, d]
  std::vector<std::size_t> token_counts;  // input sequence length of each layer
  Tensor final_xhat;                     // [B, d]
  Tensor final_rstd;                     // [B]
  Tensor final_h;                        // [B, d]
  Tensor logits;                         // [B, C]
};

// Full forward. Layers whose sequence can no longer drop r rows keep their
// length. Increments the global forward-pass counter exactly once.
ForwardTrace model_forward(const Tensor& images, const ViTParams& params,
                           const AdaptState& state, const MergeConfig& merge);

std::uint64_t forward_pass_count();

// Per-sequence token counts the schedule produces for `config` and `r`.
std::vector<std::size_t> token_schedule(const ViTConfig& config, std::size_t r);

struct LossGrads {
  Tensor logits;                     // [B, C]; may be empty
  std::vector<Tensor> cls_features;  // per layer [B, d]; empty or L entries
};

enum class GradMode { kTunable, kFull };

struct GradSet {
  std::vector<LayerNormParams> norms;
  Tensor delta;
  std::map<std::size_t, Tensor> layer_bias;
  // Gradients of every frozen weight (and the [CLS] embedding); only
  // populated in GradMode::kFull.
  std::optional<ViTParams> full;
};

GradSet model_backward(const ForwardTrace& trace, const LossGrads& grads,
                       const ViTParams& params, const AdaptState& state,
                       GradMode mode = GradMode::kTunable);

// Gradient w.r.t. the block input and the block's tunables.
struct BlockGrads {
  Tensor input;  // [B, n_in, d]
  LayerNormParams ln1, ln2;
  Tensor layer_bias;  // empty unless the layer is augmented
  std::optional<BlockParams> weights;  // kFull only
};

BlockGrads block_backward(const Tensor& grad_out, const BlockCache& cache, const ViTParams& params,
                          const AdaptState& state, GradMode mode = GradMode::kTunable);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const ViTParams& params, const std::filesystem::path& path);
ViTParams load_checkpoint(const std::filesystem::path& path);
// Also rejects a checkpoint whose manifest disagrees with `expected`.
ViTParams load_checkpoint(const std::filesystem::path& path, const ViTConfig& expected);

}  // namespace etta::vit
