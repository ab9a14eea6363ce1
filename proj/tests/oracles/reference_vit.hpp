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

// Straightforward single-sample pre-norm ViT built from the Tensor-level
// ops, used to cross-check the batched forward.

#include <cmath>
#include <vector>

#include "etta/kernels.hpp"
#include "etta/vit.hpp"

namespace etta::testing {

inline Tensor reference_logits(const Tensor& images, const vit::ViTParams& p) {
  const auto& c = p.config;
  const std::size_t batch = images.dim(0), d = c.hidden_dim, n = c.seq_len();
  const std::size_t ps = c.patch_size, g = c.grid(), hw = c.image_size;
  const std::size_t heads = c.num_heads, dh = c.head_dim();
  Tensor logits({batch, c.num_classes});
  auto add_bias = [](Tensor& y, const Tensor& b) {
    for (std::size_t i = 0; i < y.dim(0); ++i)
      for (std::size_t j = 0; j < y.dim(1); ++j) y.at(i, j) += b[j];
  };
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor patches({c.num_patches(), c.patch_dim()});
    for (std::size_t py = 0; py < g; ++py)
      for (std::size_t px = 0; px < g; ++px)
        for (std::size_t ch = 0; ch < c.channels; ++ch)
          for (std::size_t y = 0; y < ps; ++y)
            for (std::size_t x = 0; x < ps; ++x)
              patches.at(py * g + px, (ch * ps + y) * ps + x) =
                  images[((b * c.channels + ch) * hw + py * ps + y) * hw + px * ps + x];
    Tensor emb = matmul(patches, p.patch_w);
    add_bias(emb, p.patch_b);
    Tensor x({n, d});
    for (std::size_t j = 0; j < d; ++j) x.at(0, j) = p.cls_embedding[j] + p.pos_embed.at(0, j);
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x.at(i, j) = emb.at(i - 1, j) + p.pos_embed.at(i, j);

    for (const auto& blk : p.blocks) {
      Tensor h = layernorm(x, blk.ln1.gamma, blk.ln1.beta, c.ln_eps);
      Tensor q = matmul(h, blk.wq), k = matmul(h, blk.wk), v = matmul(h, blk.wv);
      add_bias(q, blk.bq);
      add_bias(k, blk.bk);
      add_bias(v, blk.bv);
      Tensor concat({n, d});
      for (std::size_t hd = 0; hd < heads; ++hd) {
        Tensor s({n, n});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t e = 0; e < dh; ++e) acc += q.at(i, hd * dh + e) * k.at(j, hd * dh + e);
            s.at(i, j) = static_cast<float>(acc / std::sqrt(double(dh)));
          }
        Tensor a = softmax(s);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t e = 0; e < dh; ++e) {
            double acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += a.at(i, j) * v.at(j, hd * dh + e);
            concat.at(i, hd * dh + e) = static_cast<float>(acc);
          }
      }
      Tensor o = matmul(concat, blk.wo);
      add_bias(o, blk.bo);
      add_inplace(x, o);
      Tensor h2 = layernorm(x, blk.ln2.gamma, blk.ln2.beta, c.ln_eps);
      Tensor f = matmul(h2, blk.w_fc1);
      add_bias(f, blk.b_fc1);
      Tensor gl = gelu(f);
      Tensor f2 = matmul(gl, blk.w_fc2);
      add_bias(f2, blk.b_fc2);
      add_inplace(x, f2);
    }
    Tensor cls({1, d});
    for (std::size_t j = 0; j < d; ++j) cls[j] = x.at(0, j);
    Tensor z = layernorm(cls, p.final_ln.gamma, p.final_ln.beta, c.ln_eps);
    Tensor out = matmul(z, p.head_w);
    for (std::size_t j = 0; j < c.num_classes; ++j) logits.at(b, j) = out[j] + p.head_b[j];
  }
  return logits;
}

}  // namespace etta::testing
