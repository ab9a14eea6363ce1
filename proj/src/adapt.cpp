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

#include "etta/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "etta/container.hpp"
#include "etta/errors.hpp"
#include "etta/kernels.hpp"

namespace etta::adapt {

using vit::AdaptState;
using vit::ForwardTrace;
using vit::ViTConfig;
using vit::ViTParams;

std::vector<std::size_t> select_augmentation_layers(std::size_t num_layers, std::size_t budget) {
  if (budget > num_layers) {
    throw ConfigError("layer budget " + std::to_string(budget) + " exceeds depth " +
                      std::to_string(num_layers));
  }
  std::vector<std::size_t> out(budget);
  for (std::size_t l = 0; l < budget; ++l) out[l] = l;
  return out;
}

std::vector<std::size_t> augmentation_layers(LayerSet set, std::size_t num_layers,
                                             std::size_t budget) {
  std::vector<std::size_t> out = select_augmentation_layers(num_layers, budget);
  switch (set) {
    case LayerSet::kShallow:
      break;
    case LayerSet::kDeep:
      for (std::size_t i = 0; i < budget; ++i) out[i] = num_layers - budget + i;
      break;
    case LayerSet::kUniform:
      for (std::size_t i = 0; i < budget; ++i) out[i] = i * num_layers / budget;
      break;
  }
  return out;
}

LayerSet parse_layer_set(const std::string& name) {
  if (name == "shallow") return LayerSet::kShallow;
  if (name == "deep") return LayerSet::kDeep;
  if (name == "uniform") return LayerSet::kUniform;
  throw ConfigError("unknown layer set '" + name + "' (shallow, deep, uniform)");
}

std::string layer_set_name(LayerSet set) {
  switch (set) {
    case LayerSet::kShallow: return "shallow";
    case LayerSet::kDeep: return "deep";
    case LayerSet::kUniform: return "uniform";
  }
  return "shallow";
}

// ---------------------------------------------------------------------------
// source statistics

SourceStats compute_source_stats(const ViTParams& params, const Tensor& images,
                                 const vit::MergeConfig& merge, std::size_t batch_size) {
  if (images.rank() != 4 || images.dim(0) < 2) {
    throw DataError("source statistics need at least two images, got " +
                    (images.rank() == 4 ? std::to_string(images.dim(0)) : shape_str(images.shape())));
  }
  if (batch_size == 0) throw ConfigError("source statistics batch size must be positive");
  const ViTConfig& cfg = params.config;
  const std::size_t total = images.dim(0), d = cfg.hidden_dim, layers = cfg.num_layers;
  const std::size_t per_image = images.size() / total;
  AdaptState fresh = vit::make_adapt_state(params, {});
  std::vector<std::vector<double>> sum(layers, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> sq(layers, std::vector<double>(d, 0.0));
  for (std::size_t start = 0; start < total; start += batch_size) {
    const std::size_t b = std::min(batch_size, total - start);
    Shape shape = images.shape();
    shape[0] = b;
    std::vector<float> chunk(images.data() + start * per_image,
                             images.data() + (start + b) * per_image);
    ForwardTrace t = vit::model_forward(Tensor(shape, std::move(chunk)), params, fresh, merge);
    for (std::size_t l = 0; l < layers; ++l) {
      const Tensor& f = t.cls_features[l];
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double v = f[i * d + j];
          sum[l][j] += v;
          sq[l][j] += v * v;
        }
      }
    }
  }
  SourceStats s;
  s.count = total;
  s.r = merge.r;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor mu({d}), var({d});
    for (std::size_t j = 0; j < d; ++j) {
      const double m = sum[l][j] / double(total);
      mu[j] = static_cast<float>(m);
      var[j] = static_cast<float>(std::max(0.0, sq[l][j] / double(total) - m * m));
    }
    s.mean.push_back(std::move(mu));
    s.var.push_back(std::move(var));
  }
  return s;
}

void save_source_stats(const SourceStats& stats, const ViTConfig& config,
                       const std::filesystem::path& path) {
  Container c;
  c.kind = "source_stats";
  c.meta["count"] = stats.count;
  c.meta["r"] = stats.r;
  c.meta["config"] = config;
  for (std::size_t l = 0; l < stats.mean.size(); ++l) {
    c.put("layers." + std::to_string(l) + ".mean", stats.mean[l]);
    c.put("layers." + std::to_string(l) + ".var", stats.var[l]);
  }
  write_container(path, c);
}

SourceStats load_source_stats(const std::filesystem::path& path, const ViTConfig& config) {
  Container c = read_container(path);
  if (c.kind != "source_stats") {
    throw FormatError(path.string() + ": expected source statistics, found '" + c.kind + "'");
  }
  SourceStats s;
  try {
    s.count = c.meta.at("count").get<std::size_t>();
    s.r = c.meta.at("r").get<std::size_t>();
    if (!(c.meta.at("config").get<ViTConfig>() == config)) {
      throw FormatError(path.string() + ": statistics were collected for a different model");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad statistics manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": bad statistics manifest: " + e.what());
  }
  if (c.arrays.size() != 2 * config.num_layers) {
    throw FormatError(path.string() + ": expected " + std::to_string(2 * config.num_layers) +
                      " arrays, found " + std::to_string(c.arrays.size()));
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string base = "layers." + std::to_string(l);
    if (!c.has(base + ".mean") || !c.has(base + ".var")) {
      throw FormatError(path.string() + ": missing " + base);
    }
    const Tensor& mu = c.get(base + ".mean");
    const Tensor& var = c.get(base + ".var");
    if (mu.shape() != Shape{config.hidden_dim} || var.shape() != Shape{config.hidden_dim}) {
      throw FormatError(path.string() + ": " + base + " has the wrong width");
    }
    for (float v : var.values()) {
      if (!(v >= 0.0f)) throw FormatError(path.string() + ": negative variance in " + base);
    }
    s.mean.push_back(mu);
    s.var.push_back(var);
  }
  return s;
}

// ---------------------------------------------------------------------------
// loss terms

double entropy_term(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) == 0) {
    throw DimensionError("entropy_term expects [B, C], got " + shape_str(probs.shape()));
  }
  const std::size_t batch = probs.dim(0), classes = probs.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double row = 0.0, h = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = probs[b * classes + c];
      if (p < 0.0) throw ContractError("entropy_term: negative probability");
      row += p;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (std::fabs(row - 1.0) > 1e-4) {
      throw ContractError("entropy_term: row " + std::to_string(b) + " sums to " +
                          std::to_string(row));
    }
    total += h;
  }
  return total / double(batch);
}

double entropy_from_logits(const Tensor& logits, Tensor* grad) {
  if (logits.rank() != 2 || logits.dim(0) == 0) {
    throw DimensionError("entropy_from_logits expects [B, C], got " + shape_str(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (grad) *grad = Tensor({batch, classes});
  std::vector<double> logp(classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const float* z = logits.data() + b * classes;
    const double mx = *std::max_element(z, z + classes);
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) se += std::exp(double(z[c]) - mx);
    const double lse = mx + std::log(se);
    double h = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      logp[c] = double(z[c]) - lse;
      h -= std::exp(logp[c]) * logp[c];
    }
    total += h;
    if (grad) {
      // dH/dz_c = -p_c (log p_c + H)
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = std::exp(logp[c]);
        (*grad)[b * classes + c] = static_cast<float>(-p * (logp[c] + h) / double(batch));
      }
    }
  }
  return total / double(batch);
}

double discrepancy_term(const std::vector<Tensor>& features, const SourceStats& stats,
                        std::vector<Tensor>* grads) {
  if (features.size() != stats.mean.size() || features.size() != stats.var.size()) {
    throw StateError("discrepancy_term: " + std::to_string(features.size()) +
                     " feature layers against statistics for " +
                     std::to_string(stats.mean.size()));
  }
  if (grads) grads->clear();
  double total = 0.0;
  for (std::size_t l = 0; l < features.size(); ++l) {
    const Tensor& f = features[l];
    if (f.rank() != 2 || f.dim(0) == 0 || stats.mean[l].shape() != Shape{f.dim(1)}) {
      throw StateError("discrepancy_term: layer " + std::to_string(l) + " features " +
                       shape_str(f.shape()) + " do not match statistics");
    }
    const std::size_t batch = f.dim(0), d = f.dim(1);
    std::vector<double> mu(d, 0.0), var(d, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < d; ++j) mu[j] += f[b * d + j];
    for (std::size_t j = 0; j < d; ++j) mu[j] /= double(batch);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = f[b * d + j] - mu[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) var[j] /= double(batch);
    std::vector<double> dm(d), dv(d);
    for (std::size_t j = 0; j < d; ++j) {
      dm[j] = mu[j] - stats.mean[l][j];
      dv[j] = var[j] - stats.var[l][j];
      total += dm[j] * dm[j] + dv[j] * dv[j];
    }
    if (grads) {
      Tensor g({batch, d});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < d; ++j) {
          const double c = f[b * d + j] - mu[j];
          g[b * d + j] = static_cast<float>(2.0 * dm[j] / double(batch) +
                                            4.0 * dv[j] * c / double(batch));
        }
      grads->push_back(std::move(g));
    }
  }
  return total;
}

double discrepancy_term(const ForwardTrace& trace, const SourceStats& stats,
                        std::vector<Tensor>* grads) {
  return discrepancy_term(trace.cls_features, stats, grads);
}

// ---------------------------------------------------------------------------
// configuration

void TTAConfig::validate(const ViTConfig& model) const {
  auto finite_nonneg = [](float v, const char* name) {
    if (!std::isfinite(v) || v < 0.0f) {
      throw ConfigError(std::string(name) + " must be finite and >= 0");
    }
  };
  finite_nonneg(lr_norm, "lr_norm");
  finite_nonneg(lr_delta, "lr_delta");
  finite_nonneg(lr_delta_l, "lr_delta_l");
  finite_nonneg(lambda, "lambda");
  if (!std::isfinite(momentum) || momentum < 0.0f || momentum >= 1.0f) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (l_bgt > model.num_layers) {
    throw ConfigError("l_bgt " + std::to_string(l_bgt) + " exceeds depth " +
                      std::to_string(model.num_layers));
  }
}

void to_json(nlohmann::json& j, const TTAConfig& c) {
  j = nlohmann::json{{"lr_norm", c.lr_norm},       {"lr_delta", c.lr_delta},
                     {"lr_delta_l", c.lr_delta_l}, {"momentum", c.momentum},
                     {"lambda", c.lambda},         {"batch_size", c.batch_size},
                     {"r", c.r},                   {"l_bgt", c.l_bgt},
                     {"layer_set", layer_set_name(c.layer_set)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TTAConfig& c) {
  if (!j.is_object()) throw ConfigError("adaptation config must be a JSON object");
  static const std::set<std::string> known = {"lr_norm", "lr_delta", "lr_delta_l", "momentum",
                                              "lambda",  "batch_size", "r", "l_bgt",
                                              "layer_set", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown adaptation config key '" + key + "'");
  }
  try {
    TTAConfig out = c;
    if (j.contains("lr_norm")) out.lr_norm = j["lr_norm"].get<float>();
    if (j.contains("lr_delta")) out.lr_delta = j["lr_delta"].get<float>();
    if (j.contains("lr_delta_l")) out.lr_delta_l = j["lr_delta_l"].get<float>();
    if (j.contains("momentum")) out.momentum = j["momentum"].get<float>();
    if (j.contains("lambda")) out.lambda = j["lambda"].get<float>();
    if (j.contains("batch_size")) out.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("r")) out.r = j["r"].get<std::size_t>();
    if (j.contains("l_bgt")) out.l_bgt = j["l_bgt"].get<std::size_t>();
    if (j.contains("layer_set")) out.layer_set = parse_layer_set(j["layer_set"].get<std::string>());
    if (j.contains("seed")) out.seed = j["seed"].get<std::uint64_t>();
    c = out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("adaptation config: ") + e.what());
  }
}

TTAConfig method_config(const std::string& method, TTAConfig base) {
  if (method == "navia") return base;
  if (method == "normtune") {
    base.lr_delta = 0.0f;
    base.lr_delta_l = 0.0f;
    base.l_bgt = 0;
    return base;
  }
  if (method == "noadapt") {
    base.lr_norm = 0.0f;
    base.lr_delta = 0.0f;
    base.lr_delta_l = 0.0f;
    base.lambda = 0.0f;
    base.l_bgt = 0;
    return base;
  }
  throw ConfigError("unknown method '" + method + "' (noadapt, normtune, navia)");
}

AdaptState make_state(const ViTParams& params, const TTAConfig& config) {
  config.validate(params.config);
  return vit::make_adapt_state(
      params, augmentation_layers(config.layer_set, params.config.num_layers, config.l_bgt));
}

void reset_state(AdaptState& state, const ViTParams& params) {
  state = vit::make_adapt_state(params, state.aug_layers());
}

// ---------------------------------------------------------------------------
// online step

nlohmann::json metrics_json(const MetricsRecord& r) {
  return nlohmann::json{{"batch", r.batch_index},
                        {"count", r.count},
                        {"correct", r.correct},
                        {"accuracy", r.accuracy},
                        {"entropy", r.entropy},
                        {"discrepancy", r.discrepancy},
                        {"loss", r.loss},
                        {"forward_passes", r.forward_passes},
                        {"rolled_back", r.rolled_back}};
}

namespace {

bool finite_state(const AdaptState& s) {
  if (!s.delta.all_finite()) return false;
  for (const auto& n : s.norms) {
    if (!n.gamma.all_finite() || !n.beta.all_finite()) return false;
  }
  for (const auto& [l, b] : s.layer_bias) {
    if (!b.all_finite()) return false;
  }
  return true;
}

bool finite_grads(const vit::GradSet& g) {
  if (!g.delta.all_finite()) return false;
  for (const auto& n : g.norms) {
    if (!n.gamma.all_finite() || !n.beta.all_finite()) return false;
  }
  for (const auto& [l, b] : g.layer_bias) {
    if (!b.all_finite()) return false;
  }
  return true;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* z = logits.data() + b * classes;
    out[b] = static_cast<int>(std::max_element(z, z + classes) - z);
  }
  return out;
}

}  // namespace

StepResult tta_step(const Tensor& images, std::span<const int> labels, const ViTParams& params,
                    AdaptState& state, const SourceStats* stats, const TTAConfig& config,
                    std::int64_t batch_index) {
  const auto t0 = std::chrono::steady_clock::now();
  if (config.lambda > 0.0f && stats == nullptr) {
    throw StateError("lambda > 0 needs source statistics (run the 'stats' command first)");
  }
  if (!labels.empty() && labels.size() != images.dim(0)) {
    throw DimensionError("tta_step: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(images.dim(0)) + " images");
  }
  const std::uint64_t passes_before = vit::forward_pass_count();
  ForwardTrace trace = vit::model_forward(images, params, state, {config.r});

  StepResult out;
  out.predictions = argmax_rows(trace.logits);
  MetricsRecord& rec = out.record;
  rec.batch_index = batch_index;
  if (!labels.empty()) {
    rec.count = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) rec.correct += out.predictions[i] == labels[i];
    rec.accuracy = double(rec.correct) / double(rec.count);
  }

  const bool adapts = config.adapts();
  Tensor g_logits;
  std::vector<Tensor> g_feats;
  rec.entropy = entropy_from_logits(trace.logits, adapts ? &g_logits : nullptr);
  if (stats != nullptr && config.lambda > 0.0f) {
    rec.discrepancy = discrepancy_term(trace, *stats, adapts ? &g_feats : nullptr);
    for (Tensor& g : g_feats) scale_inplace(g, config.lambda);
  } else if (stats != nullptr) {
    rec.discrepancy = discrepancy_term(trace, *stats);
  }
  // with lambda = 0 the discrepancy is only reported
  rec.loss = rec.entropy;
  if (config.lambda > 0.0f) rec.loss += double(config.lambda) * rec.discrepancy;

  if (!std::isfinite(rec.loss)) {
    rec.rolled_back = true;
  } else if (adapts) {
    vit::GradSet g = vit::model_backward(trace, {g_logits, g_feats}, params, state);
    if (!finite_grads(g)) {
      rec.rolled_back = true;
    } else {
      AdaptState snapshot = state;
      for (std::size_t i = 0; i < state.norms.size(); ++i) {
        sgd_step(state.norms[i].gamma, g.norms[i].gamma, state.norm_momentum[i].gamma,
                       config.lr_norm, config.momentum);
        sgd_step(state.norms[i].beta, g.norms[i].beta, state.norm_momentum[i].beta,
                       config.lr_norm, config.momentum);
      }
      sgd_step(state.delta, g.delta, state.delta_momentum, config.lr_delta,
                     config.momentum);
      for (auto& [l, bias] : state.layer_bias) {
        sgd_step(bias, g.layer_bias.at(l), state.bias_momentum[l], config.lr_delta_l,
                       config.momentum);
      }
      if (!finite_state(state)) {
        state = std::move(snapshot);
        rec.rolled_back = true;
      } else {
        ++state.step;
      }
    }
  }
  rec.forward_passes = vit::forward_pass_count() - passes_before;
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

StreamSummary evaluate_stream(const std::vector<Batch>& stream, const ViTParams& params,
                              AdaptState& state, const SourceStats* stats,
                              const TTAConfig& config, const StepObserver& observer) {
  config.validate(params.config);
  StreamSummary s;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    StepResult step = tta_step(stream[i].images, stream[i].labels, params, state, stats, config,
                               static_cast<std::int64_t>(i));
    s.correct += step.record.correct;
    s.total += step.record.count;
    s.forward_passes += step.record.forward_passes;
    if (observer) observer(step);
    s.records.push_back(step.record);
  }
  s.accuracy = s.total ? double(s.correct) / double(s.total) : 0.0;
  return s;
}

double relative_accuracy(double a, double a_min, double a_max) {
  if (!(a_max != a_min)) {
    throw ValidationError("relative accuracy needs a_max != a_min (both are " +
                          std::to_string(a_min) + ")");
  }
  return (a - a_min) / (a_max - a_min);
}

Selection select_hyperparameters(const ViTParams& params, const SourceStats* stats,
                                 const std::vector<Batch>& heldout, const TTAConfig& base,
                                 const HyperGrid& grid) {
  if (heldout.empty()) throw DataError("hyperparameter selection needs held-out batches");
  Selection sel;
  double best = std::numeric_limits<double>::infinity();
  for (float lr_delta : grid.lr_delta) {
    for (float lr_delta_l : grid.lr_delta_l) {
      for (std::size_t l_bgt : grid.l_bgt) {
        if (l_bgt > params.config.num_layers) continue;
        TTAConfig cfg = base;
        cfg.lr_delta = lr_delta;
        cfg.lr_delta_l = lr_delta_l;
        cfg.l_bgt = l_bgt;
        AdaptState state = make_state(params, cfg);
        StreamSummary s = evaluate_stream(heldout, params, state, stats, cfg);
        double loss = 0.0;
        for (const auto& r : s.records) loss += r.loss;
        loss /= double(s.records.size());
        sel.table.push_back({cfg, loss});
        if (loss < best) {
          best = loss;
          sel.best = cfg;
        }
      }
    }
  }
  if (sel.table.empty()) throw ConfigError("hyperparameter grid has no feasible point");
  return sel;
}

}  // namespace etta::adapt
