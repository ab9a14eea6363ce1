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
#include <functional>
#include <vector>

#include "json.hpp"

#include "etta/data.hpp"
#include "etta/vit.hpp"

namespace etta::train {

struct PretrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 12;
  float lr = 2e-3f;  // peak Adam rate; cosine decay to zero after warmup
  std::size_t warmup_steps = 100;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.05f;  // decoupled, matrices only
  float target_train_accuracy = 0.95f;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;            // mean cross-entropy over the epoch's batches
  double train_accuracy = 0.0;  // running accuracy during the epoch
  double lr = 0.0;              // rate at the last step
};

nlohmann::json epoch_json(const EpochLog& e);

struct PretrainResult {
  vit::ViTParams params;
  std::vector<EpochLog> log;
  double train_accuracy = 0.0;  // frozen model after training, whole train set
};

// Mean softmax cross-entropy; writes dLoss/dlogits into `grad` if given.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad);

// Trains every parameter from `init_params(config, seed)`. Throws
// NumericError on a non-finite loss and ValidationError, after the last
// epoch, when the frozen training accuracy misses the target.
PretrainResult pretrain(const vit::ViTConfig& model, const data::Dataset& train,
                        const PretrainConfig& config,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

// Accuracy of the frozen model (unchanged norms, zero deltas).
double evaluate_accuracy(const vit::ViTParams& params, const data::Dataset& dataset,
                         const vit::MergeConfig& merge, std::size_t batch_size = 256);

}  // namespace etta::train
