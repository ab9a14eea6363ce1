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


#include "etta/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <string>

#include "etta/errors.hpp"
#include "etta/rng.hpp"

namespace etta::train {

namespace {

Tensor gather_images(const data::Dataset& d, std::span<const std::size_t> idx) {
  const std::size_t s = d.images.dim(2), n = data::kChannels * s * s;
  Tensor out({idx.size(), data::kChannels, s, s});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(d.images.data() + idx[i] * n, n, out.data() + i * n);
  }
  return out;
}

bool decays(const std::string& name) {
  return name.ends_with(".weight") && name.find("ln") == std::string::npos;
}

}  // namespace

void PretrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("pretrain batch_size must be positive");
  if (epochs == 0) throw ConfigError("pretrain epochs must be positive");
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw ConfigError("pretrain lr must be positive");
  if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
    throw ConfigError("pretrain betas must lie in [0,1)");
  }
  if (!(eps > 0.0f)) throw ConfigError("pretrain eps must be positive");
  if (!(weight_decay >= 0.0f)) throw ConfigError("pretrain weight_decay must be non-negative");
  if (!(target_train_accuracy >= 0.0f && target_train_accuracy <= 1.0f)) {
    throw ConfigError("pretrain target_train_accuracy must lie in [0,1]");
  }
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"warmup_steps", c.warmup_steps},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"target_train_accuracy", c.target_train_accuracy},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  if (!j.is_object()) throw ConfigError("pretrain config must be a JSON object");
  static const std::set<std::string> known = {
      "batch_size", "epochs", "lr", "warmup_steps", "beta1", "beta2",
      "eps", "weight_decay", "target_train_accuracy", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown pretrain config key '" + key + "'");
  }
  try {
    PretrainConfig out = c;
    if (j.contains("batch_size")) out.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("epochs")) out.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("lr")) out.lr = j["lr"].get<float>();
    if (j.contains("warmup_steps")) out.warmup_steps = j["warmup_steps"].get<std::size_t>();
    if (j.contains("beta1")) out.beta1 = j["beta1"].get<float>();
    if (j.contains("beta2")) out.beta2 = j["beta2"].get<float>();
    if (j.contains("eps")) out.eps = j["eps"].get<float>();
    if (j.contains("weight_decay")) out.weight_decay = j["weight_decay"].get<float>();
    if (j.contains("target_train_accuracy")) {
      out.target_train_accuracy = j["target_train_accuracy"].get<float>();
    }
    if (j.contains("seed")) out.seed = j["seed"].get<std::uint64_t>();
    c = out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pretrain config: ") + e.what());
  }
}

nlohmann::json epoch_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy},
          {"lr", e.lr}};
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) throw DimensionError("cross_entropy: label count mismatch");
  if (grad) *grad = Tensor({b, c});
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const float* z = logits.data() + i * c;
    const float m = *std::max_element(z, z + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(double(z[k] - m));
    const double lse = m + std::log(sum);
    total += lse - z[labels[i]];
    if (grad) {
      for (std::size_t k = 0; k < c; ++k) {
        const double p = std::exp(double(z[k]) - lse);
        (*grad)[i * c + k] = static_cast<float>((p - (int(k) == labels[i] ? 1.0 : 0.0)) / b);
      }
    }
  }
  return total / static_cast<double>(b);
}

double evaluate_accuracy(const vit::ViTParams& params, const data::Dataset& dataset,
                         const vit::MergeConfig& merge, std::size_t batch_size) {
  if (dataset.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  const vit::AdaptState state = vit::make_adapt_state(params, {});
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < dataset.size(); lo += batch_size) {
    const std::size_t hi = std::min(dataset.size(), lo + batch_size);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const vit::ForwardTrace t = vit::model_forward(gather_images(dataset, idx), params, state, merge);
    const std::size_t c = t.logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* z = t.logits.data() + i * c;
      if (std::max_element(z, z + c) - z == dataset.labels[lo + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

PretrainResult pretrain(const vit::ViTConfig& model, const data::Dataset& train,
                        const PretrainConfig& config,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  model.validate();
  if (train.size() == 0) throw DataError("pretrain needs a non-empty training set");
  if (train.num_classes != model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(train.num_classes) +
                      " classes, model expects " + std::to_string(model.num_classes));
  }
  PretrainResult result;
  vit::ViTParams& params = result.params;
  params = vit::init_params(model, config.seed);

  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
  params.for_each([&](const std::string& name, Tensor& t) {
    names.push_back(name);
    tensors.push_back(&t);
  });
  std::vector<Tensor> m1, m2;
  for (Tensor* t : tensors) {
    m1.emplace_back(t->shape());
    m2.emplace_back(t->shape());
  }

  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = per_epoch * config.epochs;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(config.seed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochLog log;
    log.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < n; lo += config.batch_size) {
      const std::size_t hi = std::min(n, lo + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);

      const vit::AdaptState state = vit::make_adapt_state(params, {});
      const vit::ForwardTrace t =
          vit::model_forward(gather_images(train, idx), params, state, vit::MergeConfig{0});
      Tensor dlogits;
      const double loss = cross_entropy(t.logits, labels, &dlogits);
      if (!std::isfinite(loss)) {
        throw NumericError("pretrain diverged at step " + std::to_string(step));
      }
      log.loss += loss;
      const std::size_t c = t.logits.dim(1);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const float* z = t.logits.data() + i * c;
        if (std::max_element(z, z + c) - z == labels[i]) ++correct;
      }

      vit::GradSet g = vit::model_backward(t, {dlogits, {}}, params, state, vit::GradMode::kFull);
      std::vector<const Tensor*> grads;
      g.full->for_each([&](const std::string&, const Tensor& gt) { grads.push_back(&gt); });

      const double warm = config.warmup_steps == 0
                              ? 1.0
                              : std::min(1.0, double(step + 1) / double(config.warmup_steps));
      const double cosine =
          0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
      const double lr = config.lr * warm * cosine;
      const double bc1 = 1.0 - std::pow(double(config.beta1), double(step + 1));
      const double bc2 = 1.0 - std::pow(double(config.beta2), double(step + 1));
      for (std::size_t p = 0; p < tensors.size(); ++p) {
        Tensor& w = *tensors[p];
        const Tensor& gw = *grads[p];
        const float decay = decays(names[p]) ? static_cast<float>(lr * config.weight_decay) : 0.0f;
        for (std::size_t i = 0; i < w.size(); ++i) {
          m1[p][i] = config.beta1 * m1[p][i] + (1.0f - config.beta1) * gw[i];
          m2[p][i] = config.beta2 * m2[p][i] + (1.0f - config.beta2) * gw[i] * gw[i];
          const double mhat = m1[p][i] / bc1, vhat = m2[p][i] / bc2;
          w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config.eps)) + decay * w[i];
        }
      }
      log.lr = lr;
      ++step;
    }
    log.loss /= static_cast<double>(per_epoch);
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.train_accuracy = evaluate_accuracy(params, train, vit::MergeConfig{0});
  if (result.train_accuracy < config.target_train_accuracy) {
    throw ValidationError("pretraining did not converge: train accuracy " +
                          std::to_string(result.train_accuracy) + " < target " +
                          std::to_string(config.target_train_accuracy) + " after " +
                          std::to_string(config.epochs) + " epochs");
  }
  return result;
}

}  // namespace etta::train
