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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "etta/tensor.hpp"
#include "etta/vit.hpp"

namespace etta::adapt {

// Shallow-first augmentation set {0, ..., budget-1}. ConfigError when the
// budget exceeds the depth.
std::vector<std::size_t> select_augmentation_layers(std::size_t num_layers, std::size_t budget);

// Alternative layer sets used by the layer-selection ablation.
enum class LayerSet { kShallow, kDeep, kUniform };
std::vector<std::size_t> augmentation_layers(LayerSet set, std::size_t num_layers,
                                             std::size_t budget);
LayerSet parse_layer_set(const std::string& name);
std::string layer_set_name(LayerSet set);

// Per-layer mean and population variance of block-output [CLS] features
// over an unlabeled source sample.
struct SourceStats {
  std::vector<Tensor> mean;  // L x [d]
  std::vector<Tensor> var;   // L x [d]
  std::size_t count = 0;
  std::size_t r = 0;  // merge setting the features were collected with
};

// images [S, C, H, W], S >= 2; features are collected batch_size images at
// a time with a fresh (un-adapted) state. DataError on fewer than two
// images.
SourceStats compute_source_stats(const vit::ViTParams& params, const Tensor& images,
                                 const vit::MergeConfig& merge, std::size_t batch_size = 64);

void save_source_stats(const SourceStats& stats, const vit::ViTConfig& config,
                       const std::filesystem::path& path);
// FormatError on a malformed file or one written for another model shape.
SourceStats load_source_stats(const std::filesystem::path& path, const vit::ViTConfig& config);

// Mean Shannon entropy (nats) of the rows of probs [B, C]; 0 log 0 = 0.
// ContractError when a row sums to something other than 1 (+-1e-4).
double entropy_term(const Tensor& probs);

// Mean entropy of softmax(logits); writes d/dlogits when grad is given.
double entropy_from_logits(const Tensor& logits, Tensor* grad = nullptr);

// sum_l ||mu_l - mu_l^S||^2 + ||var_l - var_l^S||^2 over batch [CLS]
// features (one [B, d] tensor per layer). StateError on a layer-count or
// width mismatch. Writes d/dfeatures when grads is given.
double discrepancy_term(const std::vector<Tensor>& features, const SourceStats& stats,
                        std::vector<Tensor>* grads = nullptr);
double discrepancy_term(const vit::ForwardTrace& trace, const SourceStats& stats,
                        std::vector<Tensor>* grads = nullptr);

struct TTAConfig {
  float lr_norm = 5e-3f;
  float lr_delta = 1e-3f;
  float lr_delta_l = 1e-2f;
  float momentum = 0.0f;
  float lambda = 30.0f;
  std::size_t batch_size = 64;
  std::size_t r = 0;
  std::size_t l_bgt = 4;
  LayerSet layer_set = LayerSet::kShallow;
  std::uint64_t seed = 0;

  // ConfigError on negative rates, lambda < 0 or l_bgt > depth.
  void validate(const vit::ViTConfig& model) const;
  bool adapts() const { return lr_norm > 0 || lr_delta > 0 || lr_delta_l > 0; }

  friend bool operator==(const TTAConfig&, const TTAConfig&) = default;
};

void to_json(nlohmann::json& j, const TTAConfig& c);
void from_json(const nlohmann::json& j, TTAConfig& c);

// Named method presets on top of a base config:
//   noadapt   - frozen model (all rates zero)
//   normtune  - LayerNorm tuning on the same loss, no [CLS] offsets
//   navia     - the base config unchanged
TTAConfig method_config(const std::string& method, TTAConfig base);

// Fresh state for a config: delta, biases on the configured layer set.
vit::AdaptState make_state(const vit::ViTParams& params, const TTAConfig& config);

// Zeroes delta, every delta_l and all momenta, restores the LayerNorm
// affines from params and clears the step counter.
void reset_state(vit::AdaptState& state, const vit::ViTParams& params);

struct MetricsRecord {
  std::int64_t batch_index = 0;
  std::size_t count = 0;
  std::size_t correct = 0;  // predictions from pre-update parameters
  double accuracy = 0.0;
  double entropy = 0.0;
  double discrepancy = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::uint64_t forward_passes = 0;
  bool rolled_back = false;
};

// Deterministic fields only; wall-clock time is left out so identical runs
// serialize identically.
nlohmann::json metrics_json(const MetricsRecord& r);

struct StepResult {
  std::vector<int> predictions;
  MetricsRecord record;
};

// One online step: a single forward with the current state, predictions
// from those logits, loss = entropy + lambda * discrepancy on the same
// trace, one backward, SGD with momentum on the LayerNorm affines (lr_norm),
// delta (lr_delta) and each delta_l (lr_delta_l). A non-finite loss or
// update restores the pre-step state and sets rolled_back. labels may be
// empty (accuracy is then reported as 0 with count 0).
StepResult tta_step(const Tensor& images, std::span<const int> labels,
                    const vit::ViTParams& params, vit::AdaptState& state,
                    const SourceStats* stats, const TTAConfig& config,
                    std::int64_t batch_index = 0);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

struct StreamSummary {
  std::vector<MetricsRecord> records;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::uint64_t forward_passes = 0;
};

using StepObserver = std::function<void(const StepResult&)>;

StreamSummary evaluate_stream(const std::vector<Batch>& stream, const vit::ViTParams& params,
                              vit::AdaptState& state, const SourceStats* stats,
                              const TTAConfig& config, const StepObserver& observer = {});

// (a - a_min) / (a_max - a_min); ValidationError when a_max == a_min.
double relative_accuracy(double a, double a_min, double a_max);

struct HyperGrid {
  std::vector<float> lr_delta{8e-4f, 1e-3f, 3e-3f};
  std::vector<float> lr_delta_l{1e-2f, 5e-2f};
  std::vector<std::size_t> l_bgt{4, 5, 6};
};

struct GridPoint {
  TTAConfig config;
  double mean_loss = 0.0;
};

struct Selection {
  TTAConfig best;
  std::vector<GridPoint> table;
};

// Runs each grid point from a fresh state over the held-out batches and
// keeps the one with the lowest mean loss (first in grid order on ties).
// Budgets deeper than the model are skipped.
Selection select_hyperparameters(const vit::ViTParams& params, const SourceStats* stats,
                                 const std::vector<Batch>& heldout, const TTAConfig& base,
                                 const HyperGrid& grid = {});

}  // namespace etta::adapt
