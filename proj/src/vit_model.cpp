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
#include <atomic>
#include <cmath>

#include "etta/errors.hpp"
#include "etta/parallel.hpp"
#include "etta/vit.hpp"

namespace etta::vit {

namespace {

std::atomic<std::uint64_t> g_forward_passes{0};

// y[rows, out] = x[rows, in] W + b, parallel over row chunks.
void linear_rows(std::size_t rows, std::size_t in, std::size_t out, const float* x,
                 const Tensor& w, const Tensor& b, float* y) {
  parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    kern::linear(hi - lo, in, out, x + lo * in, w.data(), b.data(), y + lo * out);
  });
}

// dx[rows, in] (+)= dy[rows, out] W^T
void linear_input_grad(std::size_t rows, std::size_t in, std::size_t out, const float* dy,
                       const Tensor& w, float* dx, bool accumulate) {
  parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    kern::gemm_nt(hi - lo, in, out, dy + lo * out, w.data(), dx + lo * in, accumulate);
  });
}

// dW[in, out] += x^T dy and db[out] += colsum(dy). Parallel over rows of
// dW; each element sums over samples in a fixed order.
void linear_weight_grad(std::size_t rows, std::size_t in, std::size_t out, const float* x,
                        const float* dy, Tensor& dw, Tensor& db) {
  std::vector<float> xt(in * rows);
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < in; ++i) xt[i * rows + p] = x[p * in + i];
  }
  parallel_for(in, [&](std::size_t lo, std::size_t hi) {
    kern::gemm_nn(hi - lo, out, rows, xt.data() + lo * rows, dy, dw.data() + lo * out, true);
  });
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t j = 0; j < out; ++j) db[j] += dy[p * out + j];
  }
}

void layernorm_rows(std::size_t rows, std::size_t d, const float* x, const LayerNormParams& ln,
                    float eps, float* y, float* xhat, float* rstd) {
  parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    kern::layernorm_forward(hi - lo, d, x + lo * d, ln.gamma.data(), ln.beta.data(), eps,
                            y + lo * d, xhat + lo * d, rstd + lo);
  });
}

// dx (+)= LN backward; dgamma/dbeta accumulated serially in row order.
void layernorm_rows_backward(std::size_t rows, std::size_t d, const float* dy,
                             const float* xhat, const float* rstd, const LayerNormParams& ln,
                             float* dx, LayerNormParams& grads) {
  parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    kern::layernorm_backward(hi - lo, d, dy + lo * d, xhat + lo * d, rstd + lo,
                             ln.gamma.data(), dx + lo * d, nullptr, nullptr, true);
  });
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      grads.gamma[j] += dy[r * d + j] * xhat[r * d + j];
      grads.beta[j] += dy[r * d + j];
    }
  }
}

LayerNormParams zero_norm(std::size_t d) { return {Tensor::zeros({d}), Tensor::zeros({d})}; }

BlockParams zero_block_like(const BlockParams& b) {
  auto z = [](const Tensor& t) { return Tensor::zeros(t.shape()); };
  BlockParams g;
  g.ln1 = {z(b.ln1.gamma), z(b.ln1.beta)};
  g.wq = z(b.wq);
  g.bq = z(b.bq);
  g.wk = z(b.wk);
  g.bk = z(b.bk);
  g.wv = z(b.wv);
  g.bv = z(b.bv);
  g.wo = z(b.wo);
  g.bo = z(b.bo);
  g.ln2 = {z(b.ln2.gamma), z(b.ln2.beta)};
  g.w_fc1 = z(b.w_fc1);
  g.b_fc1 = z(b.b_fc1);
  g.w_fc2 = z(b.w_fc2);
  g.b_fc2 = z(b.b_fc2);
  return g;
}

ViTParams zero_like(const ViTParams& p) {
  ViTParams g = p;
  g.for_each([](const std::string&, Tensor& t) { t.fill(0.0f); });
  return g;
}

void check_state(const ViTParams& params, const AdaptState& state) {
  const std::size_t d = params.config.hidden_dim;
  if (state.norms.size() != 2 * params.config.num_layers + 1) {
    throw StateError("adapt state carries " + std::to_string(state.norms.size()) +
                     " norms for a model with " + std::to_string(params.config.num_layers) +
                     " layers");
  }
  expect_shape(state.delta, {d}, "adapt state delta");
  for (const auto& [l, bias] : state.layer_bias) {
    if (l >= params.config.num_layers) throw StateError("bias for nonexistent layer");
    expect_shape(bias, {d}, "adapt state layer bias");
  }
}

}  // namespace

std::uint64_t forward_pass_count() { return g_forward_passes.load(); }

std::vector<std::size_t> token_schedule(const ViTConfig& config, std::size_t r) {
  std::vector<std::size_t> counts;
  std::size_t n = config.seq_len();
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    counts.push_back(n);
    if (r > 0 && r <= agg::max_merge(n)) n -= r;
  }
  return counts;
}

agg::TokenBatch patch_embed(const Tensor& images, const ViTParams& params,
                            const AdaptState& state, PatchEmbedCache* cache) {
  const ViTConfig& cfg = params.config;
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size) {
    throw ConfigError("patch_embed: images " + shape_str(images.shape()) + " do not match [B," +
                      std::to_string(cfg.channels) + "," + std::to_string(cfg.image_size) + "," +
                      std::to_string(cfg.image_size) + "]");
  }
  check_state(params, state);
  const std::size_t batch = images.dim(0), n = cfg.num_patches(), d = cfg.hidden_dim;
  const std::size_t ps = cfg.patch_size, grid = cfg.grid(), pd = cfg.patch_dim();
  const std::size_t hw = cfg.image_size;
  Tensor patches({batch, n, pd});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        float* out = patches.data() + (b * n + gy * grid + gx) * pd;
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          for (std::size_t py = 0; py < ps; ++py) {
            const float* src =
                images.data() + ((b * cfg.channels + c) * hw + gy * ps + py) * hw + gx * ps;
            std::copy(src, src + ps, out + (c * ps + py) * ps);
          }
        }
      }
    }
  }
  agg::TokenBatch t{Tensor({batch, n + 1, d}), Tensor::full({batch, n + 1}, 1.0f)};
  Tensor projected({batch * n, d});
  linear_rows(batch * n, pd, d, patches.data(), params.patch_w, params.patch_b,
              projected.data());
  for (std::size_t b = 0; b < batch; ++b) {
    float* seq = t.tokens.data() + b * (n + 1) * d;
    for (std::size_t j = 0; j < d; ++j) {
      seq[j] = params.cls_embedding[j] + state.delta[j] + params.pos_embed[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const float* pr = projected.data() + (b * n + i) * d;
      const float* pos = params.pos_embed.data() + (i + 1) * d;
      float* dst = seq + (i + 1) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = pr[j] + pos[j];
    }
  }
  if (cache) cache->patches = std::move(patches);
  return t;
}

BlockOutput block_forward(const agg::TokenBatch& input, std::size_t layer_idx,
                          const ViTParams& params, const AdaptState& state, std::size_t r) {
  const ViTConfig& cfg = params.config;
  if (layer_idx >= cfg.num_layers) throw ConfigError("block_forward: layer index out of range");
  check_state(params, state);
  const Tensor& tokens = input.tokens;
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.hidden_dim) {
    throw DimensionError("block_forward: tokens " + shape_str(tokens.shape()));
  }
  const std::size_t batch = tokens.dim(0), n = tokens.dim(1), d = cfg.hidden_dim;
  expect_shape(input.sizes, {batch, n}, "block_forward sizes");
  for (float s : input.sizes.values()) {
    if (!(s >= 1.0f)) throw DimensionError("block_forward: token sizes must be >= 1");
  }
  if (r > agg::max_merge(n)) {
    throw ScheduleError("layer " + std::to_string(layer_idx) + ": cannot remove r=" +
                        std::to_string(r) + " of " + std::to_string(n - 1) + " image tokens");
  }
  const BlockParams& bp = params.blocks[layer_idx];
  const LayerNormParams& ln1 = state.norms[ln1_index(layer_idx)];
  const LayerNormParams& ln2 = state.norms[ln2_index(layer_idx)];
  const std::size_t heads = cfg.num_heads, dh = cfg.head_dim(), mlp = cfg.mlp_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  BlockCache c;
  c.layer = layer_idx;
  c.batch = batch;
  c.n_in = n;
  c.sizes_in = input.sizes;

  Tensor x = tokens;
  if (const Tensor* bias = state.bias_for(layer_idx)) {
    for (std::size_t b = 0; b < batch; ++b) {
      float* row0 = x.data() + b * n * d;
      for (std::size_t j = 0; j < d; ++j) row0[j] += (*bias)[j];
    }
  }

  // attention
  const std::size_t rows = batch * n;
  c.xhat1 = Tensor({batch, n, d});
  c.rstd1 = Tensor({rows});
  c.h1 = Tensor({batch, n, d});
  layernorm_rows(rows, d, x.data(), ln1, cfg.ln_eps, c.h1.data(), c.xhat1.data(),
                 c.rstd1.data());
  c.q = Tensor({batch, n, d});
  c.k = Tensor({batch, n, d});
  c.v = Tensor({batch, n, d});
  linear_rows(rows, d, d, c.h1.data(), bp.wq, bp.bq, c.q.data());
  linear_rows(rows, d, d, c.h1.data(), bp.wk, bp.bk, c.k.data());
  linear_rows(rows, d, d, c.h1.data(), bp.wv, bp.bv, c.v.data());
  c.attn = Tensor({batch, heads, n, n});
  c.attn_out = Tensor({batch, n, d});
  parallel_for(batch * heads, [&](std::size_t lo, std::size_t hi) {
    std::vector<float> qh(n * dh), kh(n * dh), vh(n * dh), oh(n * dh), log_size(n);
    for (std::size_t bh = lo; bh < hi; ++bh) {
      const std::size_t b = bh / heads, h = bh % heads;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (b * n + i) * d + h * dh;
        std::copy_n(c.q.data() + off, dh, qh.data() + i * dh);
        std::copy_n(c.k.data() + off, dh, kh.data() + i * dh);
        std::copy_n(c.v.data() + off, dh, vh.data() + i * dh);
        log_size[i] = std::log(input.sizes[b * n + i]);
      }
      float* a = c.attn.data() + bh * n * n;
      kern::gemm_nt(n, n, dh, qh.data(), kh.data(), a);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a[i * n + j] = a[i * n + j] * scale + log_size[j];
      }
      kern::softmax_rows(n, n, a);
      kern::gemm_nn(n, dh, n, a, vh.data(), oh.data());
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(oh.data() + i * dh, dh, c.attn_out.data() + (b * n + i) * d + h * dh);
      }
    }
  });
  {
    Tensor y({batch, n, d});
    linear_rows(rows, d, d, c.attn_out.data(), bp.wo, bp.bo, y.data());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  }

  // aggregation between MHSA and FFN
  agg::TokenBatch mid{std::move(x), input.sizes};
  c.plans.assign(batch, agg::MergePlan{});
  if (r > 0) {
    parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
      std::vector<float> key_mean(n * dh);
      for (std::size_t b = lo; b < hi; ++b) {
        std::fill(key_mean.begin(), key_mean.end(), 0.0f);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t h = 0; h < heads; ++h) {
            const float* kr = c.k.data() + (b * n + i) * d + h * dh;
            for (std::size_t j = 0; j < dh; ++j) key_mean[i * dh + j] += kr[j];
          }
          for (std::size_t j = 0; j < dh; ++j) key_mean[i * dh + j] /= static_cast<float>(heads);
        }
        const agg::ScoreTable scores = agg::similarity_scores(key_mean, n, dh);
        c.plans[b] = agg::bipartite_soft_matching(scores, r);
        c.plans[b].layer_idx = static_cast<int>(layer_idx);
      }
    });
    mid = agg::apply_merge(mid, c.plans);
    c.merged = true;
  } else {
    for (auto& p : c.plans) p.layer_idx = static_cast<int>(layer_idx);
  }
  const std::size_t n_out = mid.tokens.dim(1);
  c.n_out = n_out;

  // feed-forward
  const std::size_t rows2 = batch * n_out;
  c.xhat2 = Tensor({batch, n_out, d});
  c.rstd2 = Tensor({rows2});
  c.h2 = Tensor({batch, n_out, d});
  layernorm_rows(rows2, d, mid.tokens.data(), ln2, cfg.ln_eps, c.h2.data(), c.xhat2.data(),
                 c.rstd2.data());
  c.f1 = Tensor({batch, n_out, mlp});
  c.g = Tensor({batch, n_out, mlp});
  linear_rows(rows2, d, mlp, c.h2.data(), bp.w_fc1, bp.b_fc1, c.f1.data());
  parallel_for(rows2, [&](std::size_t lo, std::size_t hi) {
    kern::gelu_forward((hi - lo) * mlp, c.f1.data() + lo * mlp, c.g.data() + lo * mlp);
  });
  {
    Tensor f2({batch, n_out, d});
    linear_rows(rows2, mlp, d, c.g.data(), bp.w_fc2, bp.b_fc2, f2.data());
    for (std::size_t i = 0; i < f2.size(); ++i) mid.tokens[i] += f2[i];
  }
  return BlockOutput{std::move(mid), std::move(c)};
}

BlockGrads block_backward(const Tensor& grad_out, const BlockCache& c, const ViTParams& params,
                          const AdaptState& state, GradMode mode) {
  const ViTConfig& cfg = params.config;
  const std::size_t batch = c.batch, n = c.n_in, n_out = c.n_out, d = cfg.hidden_dim;
  const std::size_t heads = cfg.num_heads, dh = cfg.head_dim(), mlp = cfg.mlp_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  expect_shape(grad_out, {batch, n_out, d}, "block_backward grad_out");
  const BlockParams& bp = params.blocks.at(c.layer);
  const LayerNormParams& ln1 = state.norms.at(ln1_index(c.layer));
  const LayerNormParams& ln2 = state.norms.at(ln2_index(c.layer));
  const bool full = mode == GradMode::kFull;

  BlockGrads g;
  g.ln1 = zero_norm(d);
  g.ln2 = zero_norm(d);
  if (full) g.weights = zero_block_like(bp);

  // feed-forward
  const std::size_t rows2 = batch * n_out;
  Tensor dx2 = grad_out;
  Tensor dgelu({batch, n_out, mlp});
  linear_input_grad(rows2, mlp, d, grad_out.data(), bp.w_fc2, dgelu.data(), false);
  if (full) {
    linear_weight_grad(rows2, mlp, d, c.g.data(), grad_out.data(), g.weights->w_fc2,
                       g.weights->b_fc2);
  }
  Tensor df1({batch, n_out, mlp});
  parallel_for(rows2, [&](std::size_t lo, std::size_t hi) {
    kern::gelu_backward((hi - lo) * mlp, c.f1.data() + lo * mlp, dgelu.data() + lo * mlp,
                        df1.data() + lo * mlp);
  });
  Tensor dh2({batch, n_out, d});
  linear_input_grad(rows2, d, mlp, df1.data(), bp.w_fc1, dh2.data(), false);
  if (full) {
    linear_weight_grad(rows2, d, mlp, c.h2.data(), df1.data(), g.weights->w_fc1,
                       g.weights->b_fc1);
  }
  layernorm_rows_backward(rows2, d, dh2.data(), c.xhat2.data(), c.rstd2.data(), ln2,
                          dx2.data(), g.ln2);

  // aggregation
  Tensor dx1;
  if (c.merged) {
    dx1 = Tensor({batch, n, d});
    parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t b = lo; b < hi; ++b) {
        const agg::MergeMap map = agg::build_merge_map(c.plans[b], c.sizes_in.row(b));
        agg::merge_rows_backward(map, d, dx2.data() + b * n_out * d, dx1.data() + b * n * d);
      }
    });
  } else {
    dx1 = std::move(dx2);
  }

  // attention
  const std::size_t rows = batch * n;
  Tensor dx0 = dx1;
  Tensor dattn_out({batch, n, d});
  linear_input_grad(rows, d, d, dx1.data(), bp.wo, dattn_out.data(), false);
  if (full) {
    linear_weight_grad(rows, d, d, c.attn_out.data(), dx1.data(), g.weights->wo, g.weights->bo);
  }
  Tensor dq({batch, n, d}), dk({batch, n, d}), dv({batch, n, d});
  parallel_for(batch * heads, [&](std::size_t lo, std::size_t hi) {
    std::vector<float> qh(n * dh), kh(n * dh), vh(n * dh), doh(n * dh);
    std::vector<float> da(n * n), ds(n * n), dqh(n * dh), dkh(n * dh), dvh(n * dh);
    for (std::size_t bh = lo; bh < hi; ++bh) {
      const std::size_t b = bh / heads, h = bh % heads;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (b * n + i) * d + h * dh;
        std::copy_n(c.q.data() + off, dh, qh.data() + i * dh);
        std::copy_n(c.k.data() + off, dh, kh.data() + i * dh);
        std::copy_n(c.v.data() + off, dh, vh.data() + i * dh);
        std::copy_n(dattn_out.data() + off, dh, doh.data() + i * dh);
      }
      const float* a = c.attn.data() + bh * n * n;
      kern::gemm_nt(n, n, dh, doh.data(), vh.data(), da.data());
      kern::gemm_tn(n, dh, n, a, doh.data(), dvh.data());
      kern::softmax_rows_backward(n, n, a, da.data(), ds.data());
      for (float& v : ds) v *= scale;
      kern::gemm_nn(n, dh, n, ds.data(), kh.data(), dqh.data());
      kern::gemm_tn(n, dh, n, ds.data(), qh.data(), dkh.data());
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (b * n + i) * d + h * dh;
        std::copy_n(dqh.data() + i * dh, dh, dq.data() + off);
        std::copy_n(dkh.data() + i * dh, dh, dk.data() + off);
        std::copy_n(dvh.data() + i * dh, dh, dv.data() + off);
      }
    }
  });
  Tensor dh1({batch, n, d});
  linear_input_grad(rows, d, d, dq.data(), bp.wq, dh1.data(), false);
  linear_input_grad(rows, d, d, dk.data(), bp.wk, dh1.data(), true);
  linear_input_grad(rows, d, d, dv.data(), bp.wv, dh1.data(), true);
  if (full) {
    linear_weight_grad(rows, d, d, c.h1.data(), dq.data(), g.weights->wq, g.weights->bq);
    linear_weight_grad(rows, d, d, c.h1.data(), dk.data(), g.weights->wk, g.weights->bk);
    linear_weight_grad(rows, d, d, c.h1.data(), dv.data(), g.weights->wv, g.weights->bv);
  }
  layernorm_rows_backward(rows, d, dh1.data(), c.xhat1.data(), c.rstd1.data(), ln1, dx0.data(),
                          g.ln1);

  if (state.bias_for(c.layer) != nullptr) {
    g.layer_bias = Tensor::zeros({d});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < d; ++j) g.layer_bias[j] += dx0[b * n * d + j];
    }
  }
  if (full) {
    g.weights->ln1 = g.ln1;
    g.weights->ln2 = g.ln2;
  }
  g.input = std::move(dx0);
  return g;
}

ForwardTrace model_forward(const Tensor& images, const ViTParams& params,
                           const AdaptState& state, const MergeConfig& merge) {
  const ViTConfig& cfg = params.config;
  ForwardTrace t;
  t.pass_id = ++g_forward_passes;
  t.config = cfg;
  t.aug_layers = state.aug_layers();
  agg::TokenBatch tokens = patch_embed(images, params, state, &t.embed);
  const std::size_t batch = images.dim(0), d = cfg.hidden_dim;
  t.batch = batch;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t n = tokens.tokens.dim(1);
    const std::size_t r = merge.r <= agg::max_merge(n) ? merge.r : 0;
    t.token_counts.push_back(n);
    BlockOutput out = block_forward(tokens, l, params, state, r);
    tokens = std::move(out.out);
    t.blocks.push_back(std::move(out.cache));
    const std::size_t n_out = tokens.tokens.dim(1);
    Tensor cls({batch, d});
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(tokens.tokens.data() + b * n_out * d, d, cls.data() + b * d);
    }
    t.cls_features.push_back(std::move(cls));
  }
  const LayerNormParams& fln = state.norms[final_ln_index(cfg.num_layers)];
  t.final_xhat = Tensor({batch, d});
  t.final_rstd = Tensor({batch});
  t.final_h = Tensor({batch, d});
  kern::layernorm_forward(batch, d, t.cls_features.back().data(), fln.gamma.data(),
                          fln.beta.data(), cfg.ln_eps, t.final_h.data(), t.final_xhat.data(),
                          t.final_rstd.data());
  t.logits = Tensor({batch, cfg.num_classes});
  kern::linear(batch, d, cfg.num_classes, t.final_h.data(), params.head_w.data(),
               params.head_b.data(), t.logits.data());
  return t;
}

GradSet model_backward(const ForwardTrace& trace, const LossGrads& grads,
                       const ViTParams& params, const AdaptState& state, GradMode mode) {
  const ViTConfig& cfg = params.config;
  if (!(trace.config == cfg) || trace.aug_layers != state.aug_layers() ||
      trace.blocks.size() != cfg.num_layers) {
    throw StateError("model_backward: trace was produced by a different model or state");
  }
  check_state(params, state);
  const std::size_t batch = trace.batch, d = cfg.hidden_dim, classes = cfg.num_classes;
  const bool full = mode == GradMode::kFull;
  if (!grads.logits.empty()) expect_shape(grads.logits, {batch, classes}, "logit gradient");
  if (!grads.cls_features.empty()) {
    if (grads.cls_features.size() != cfg.num_layers) {
      throw StateError("model_backward: feature gradients for " +
                       std::to_string(grads.cls_features.size()) + " layers, model has " +
                       std::to_string(cfg.num_layers));
    }
    for (const auto& gf : grads.cls_features) {
      if (!gf.empty()) expect_shape(gf, {batch, d}, "[CLS] feature gradient");
    }
  }

  GradSet out;
  for (std::size_t i = 0; i < state.norms.size(); ++i) out.norms.push_back(zero_norm(d));
  out.delta = Tensor::zeros({d});
  for (std::size_t l : state.aug_layers()) out.layer_bias[l] = Tensor::zeros({d});
  if (full) out.full = zero_like(params);

  // head and final norm act on the [CLS] row only
  const std::size_t n_last = trace.blocks.back().n_out;
  Tensor dx = Tensor::zeros({batch, n_last, d});
  if (!grads.logits.empty()) {
    Tensor dh({batch, d});
    kern::gemm_nt(batch, d, classes, grads.logits.data(), params.head_w.data(), dh.data());
    if (full) {
      linear_weight_grad(batch, d, classes, trace.final_h.data(), grads.logits.data(),
                         out.full->head_w, out.full->head_b);
    }
    Tensor dcls({batch, d});
    LayerNormParams& fg = out.norms[final_ln_index(cfg.num_layers)];
    const LayerNormParams& fln = state.norms[final_ln_index(cfg.num_layers)];
    kern::layernorm_backward(batch, d, dh.data(), trace.final_xhat.data(),
                             trace.final_rstd.data(), fln.gamma.data(), dcls.data(),
                             fg.gamma.data(), fg.beta.data());
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < d; ++j) dx[b * n_last * d + j] += dcls[b * d + j];
    }
  }

  for (std::size_t li = cfg.num_layers; li-- > 0;) {
    const BlockCache& cache = trace.blocks[li];
    if (!grads.cls_features.empty() && !grads.cls_features[li].empty()) {
      const Tensor& gf = grads.cls_features[li];
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < d; ++j) dx[b * cache.n_out * d + j] += gf[b * d + j];
      }
    }
    BlockGrads bg = block_backward(dx, cache, params, state, mode);
    add_inplace(out.norms[ln1_index(li)].gamma, bg.ln1.gamma);
    add_inplace(out.norms[ln1_index(li)].beta, bg.ln1.beta);
    add_inplace(out.norms[ln2_index(li)].gamma, bg.ln2.gamma);
    add_inplace(out.norms[ln2_index(li)].beta, bg.ln2.beta);
    if (!bg.layer_bias.empty()) add_inplace(out.layer_bias.at(li), bg.layer_bias);
    if (full) out.full->blocks[li] = std::move(*bg.weights);
    dx = std::move(bg.input);
  }

  const std::size_t n0 = cfg.seq_len(), np = cfg.num_patches();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < d; ++j) out.delta[j] += dx[b * n0 * d + j];
  }
  if (full) {
    ViTParams& fg = *out.full;
    fg.cls_embedding = out.delta;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n0 * d; ++i) fg.pos_embed[i] += dx[b * n0 * d + i];
    }
    Tensor dimg({batch * np, d});
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(dx.data() + (b * n0 + 1) * d, np * d, dimg.data() + b * np * d);
    }
    linear_weight_grad(batch * np, cfg.patch_dim(), d, trace.embed.patches.data(), dimg.data(),
                       fg.patch_w, fg.patch_b);
    fg.final_ln = out.norms[final_ln_index(cfg.num_layers)];
  }
  return out;
}

}  // namespace etta::vit
