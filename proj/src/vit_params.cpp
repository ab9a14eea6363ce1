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

#include <algorithm>
#include <cmath>
#include <set>

#include "etta/container.hpp"
#include "etta/errors.hpp"
#include "etta/rng.hpp"
#include "etta/vit.hpp"

namespace etta::vit {

void ViTConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || channels == 0 || hidden_dim == 0 ||
      num_layers == 0 || num_heads == 0 || mlp_ratio == 0 || num_classes == 0) {
    throw ConfigError("model config fields must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) +
                      " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (!(ln_eps > 0.0f)) throw ConfigError("ln_eps must be positive");
}

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size},
       {"channels", c.channels},     {"hidden_dim", c.hidden_dim},
       {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
       {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes},
       {"ln_eps", c.ln_eps}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  static const std::set<std::string> known = {
      "image_size", "patch_size", "channels",    "hidden_dim", "num_layers",
      "num_heads",  "mlp_ratio",  "num_classes", "ln_eps"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  ViTConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.channels = j.value("channels", d.channels);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
  c.validate();
}

namespace {

template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  fn("patch_embed.weight", p.patch_w);
  fn("patch_embed.bias", p.patch_b);
  fn("pos_embed", p.pos_embed);
  fn("cls_embedding", p.cls_embedding);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    auto& b = p.blocks[l];
    const std::string pre = "blocks." + std::to_string(l) + ".";
    fn(pre + "ln1.gamma", b.ln1.gamma);
    fn(pre + "ln1.beta", b.ln1.beta);
    fn(pre + "attn.q.weight", b.wq);
    fn(pre + "attn.q.bias", b.bq);
    fn(pre + "attn.k.weight", b.wk);
    fn(pre + "attn.k.bias", b.bk);
    fn(pre + "attn.v.weight", b.wv);
    fn(pre + "attn.v.bias", b.bv);
    fn(pre + "attn.proj.weight", b.wo);
    fn(pre + "attn.proj.bias", b.bo);
    fn(pre + "ln2.gamma", b.ln2.gamma);
    fn(pre + "ln2.beta", b.ln2.beta);
    fn(pre + "mlp.fc1.weight", b.w_fc1);
    fn(pre + "mlp.fc1.bias", b.b_fc1);
    fn(pre + "mlp.fc2.weight", b.w_fc2);
    fn(pre + "mlp.fc2.bias", b.b_fc2);
  }
  fn("final_ln.gamma", p.final_ln.gamma);
  fn("final_ln.beta", p.final_ln.beta);
  fn("head.weight", p.head_w);
  fn("head.bias", p.head_b);
}

}  // namespace

void ViTParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit(*this, fn);
}

void ViTParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit(*this, fn);
}

ViTParams zero_params(const ViTConfig& config) {
  config.validate();
  const std::size_t d = config.hidden_dim, m = config.mlp_dim();
  auto ln = [d] { return LayerNormParams{Tensor::full({d}, 1.0f), Tensor::zeros({d})}; };
  ViTParams p;
  p.config = config;
  p.patch_w = Tensor::zeros({config.patch_dim(), d});
  p.patch_b = Tensor::zeros({d});
  p.pos_embed = Tensor::zeros({config.seq_len(), d});
  p.cls_embedding = Tensor::zeros({d});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    BlockParams b;
    b.ln1 = ln();
    b.wq = Tensor::zeros({d, d});
    b.bq = Tensor::zeros({d});
    b.wk = Tensor::zeros({d, d});
    b.bk = Tensor::zeros({d});
    b.wv = Tensor::zeros({d, d});
    b.bv = Tensor::zeros({d});
    b.wo = Tensor::zeros({d, d});
    b.bo = Tensor::zeros({d});
    b.ln2 = ln();
    b.w_fc1 = Tensor::zeros({d, m});
    b.b_fc1 = Tensor::zeros({m});
    b.w_fc2 = Tensor::zeros({m, d});
    b.b_fc2 = Tensor::zeros({d});
    p.blocks.push_back(std::move(b));
  }
  p.final_ln = ln();
  p.head_w = Tensor::zeros({d, config.num_classes});
  p.head_b = Tensor::zeros({config.num_classes});
  return p;
}

ViTParams init_params(const ViTConfig& config, std::uint64_t seed) {
  ViTParams p = zero_params(config);
  Rng rng(seed);
  auto trunc_normal = [&rng](Tensor& t, double std) {
    for (float& v : t.values()) {
      double x;
      do {
        x = rng.normal();
      } while (std::fabs(x) > 2.0);
      v = static_cast<float>(x * std);
    }
  };
  p.for_each([&](const std::string& name, Tensor& t) {
    const bool is_weight = name.ends_with(".weight") || name == "pos_embed" ||
                           name == "cls_embedding";
    if (!is_weight) return;
    // fan-in scaled so activations keep unit scale through the residual
    // stream at desk-scale widths
    double std = 0.02;
    if (t.rank() == 2 && name != "pos_embed") std = 1.0 / std::sqrt(double(t.dim(0)));
    trunc_normal(t, std);
  });
  return p;
}

std::vector<LayerNormParams> copy_norms(const ViTParams& params) {
  std::vector<LayerNormParams> norms;
  norms.reserve(2 * params.blocks.size() + 1);
  for (const auto& b : params.blocks) {
    norms.push_back(b.ln1);
    norms.push_back(b.ln2);
  }
  norms.push_back(params.final_ln);
  return norms;
}

void write_norms(ViTParams& params, const std::vector<LayerNormParams>& norms) {
  if (norms.size() != 2 * params.blocks.size() + 1) {
    throw StateError("norm set size does not match model depth");
  }
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    params.blocks[l].ln1 = norms[ln1_index(l)];
    params.blocks[l].ln2 = norms[ln2_index(l)];
  }
  params.final_ln = norms.back();
}

std::vector<std::size_t> AdaptState::aug_layers() const {
  std::vector<std::size_t> out;
  for (const auto& [l, _] : layer_bias) out.push_back(l);
  return out;
}

const Tensor* AdaptState::bias_for(std::size_t layer) const {
  auto it = layer_bias.find(layer);
  return it == layer_bias.end() ? nullptr : &it->second;
}

AdaptState make_adapt_state(const ViTParams& params,
                            const std::vector<std::size_t>& aug_layers) {
  const std::size_t d = params.config.hidden_dim;
  AdaptState s;
  s.norms = copy_norms(params);
  s.delta = Tensor::zeros({d});
  s.delta_momentum = Tensor::zeros({d});
  for (const auto& n : s.norms) {
    s.norm_momentum.push_back({Tensor::zeros(n.gamma.shape()), Tensor::zeros(n.beta.shape())});
  }
  for (std::size_t l : aug_layers) {
    if (l >= params.config.num_layers) {
      throw ConfigError("augmentation layer " + std::to_string(l) + " outside model depth " +
                        std::to_string(params.config.num_layers));
    }
    s.layer_bias[l] = Tensor::zeros({d});
    s.bias_momentum[l] = Tensor::zeros({d});
  }
  return s;
}

void save_checkpoint(const ViTParams& params, const std::filesystem::path& path) {
  Container c;
  c.kind = "checkpoint";
  c.meta["config"] = params.config;
  params.for_each([&](const std::string& name, const Tensor& t) { c.put(name, t); });
  write_container(path, c);
}

ViTParams load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.kind != "checkpoint") {
    throw FormatError(path.string() + " holds a '" + c.kind + "' container, not a checkpoint");
  }
  ViTConfig config;
  try {
    config = c.meta.at("config").get<ViTConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config unreadable: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  ViTParams p = zero_params(config);
  std::size_t expected = 0;
  p.for_each([&](const std::string& name, Tensor& t) {
    ++expected;
    if (!c.has(name)) throw FormatError("checkpoint is missing '" + name + "'");
    const Tensor& stored = c.get(name);
    if (stored.shape() != t.shape()) {
      throw FormatError("checkpoint array '" + name + "' has shape " +
                        shape_str(stored.shape()) + ", config implies " + shape_str(t.shape()));
    }
    t = stored;
  });
  if (c.arrays.size() != expected) {
    throw FormatError("checkpoint holds " + std::to_string(c.arrays.size()) +
                      " arrays, expected " + std::to_string(expected));
  }
  return p;
}

ViTParams load_checkpoint(const std::filesystem::path& path, const ViTConfig& expected) {
  ViTParams p = load_checkpoint(path);
  if (!(p.config == expected)) {
    throw FormatError("checkpoint config does not match the requested model config");
  }
  return p;
}

}  // namespace etta::vit
