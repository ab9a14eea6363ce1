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
#include <span>
#include <vector>

#include "etta/tensor.hpp"

namespace etta {

// ---------------------------------------------------------------------------
// Raw row-major kernels. The model's hot path calls these directly on
// per-sample buffers; the Tensor-level ops below are thin wrappers over the
// same routines so the gradient tests exercise the code the model runs.
// ---------------------------------------------------------------------------
namespace kern {

// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate = false);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate = false);
// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate = false);

// y = x W + bias for `rows` rows; bias may be null.
void linear(std::size_t rows, std::size_t in, std::size_t out, const float* x,
            const float* w, const float* bias, float* y);

void layernorm_forward(std::size_t rows, std::size_t d, const float* x,
                       const float* gamma, const float* beta, float eps,
                       float* y, float* xhat, float* rstd);
// dx is overwritten (or accumulated into when `accumulate`); dgamma/dbeta
// are always accumulated and may be null.
void layernorm_backward(std::size_t rows, std::size_t d, const float* dy,
                        const float* xhat, const float* rstd,
                        const float* gamma, float* dx, float* dgamma,
                        float* dbeta, bool accumulate = false);

// In-place softmax over contiguous rows of length `len`.
void softmax_rows(std::size_t rows, std::size_t len, float* x);
void softmax_rows_backward(std::size_t rows, std::size_t len, const float* y,
                           const float* dy, float* dx);

void gelu_forward(std::size_t n, const float* x, float* y);
void gelu_backward(std::size_t n, const float* x, const float* dy, float* dx);

}  // namespace kern

// ---------------------------------------------------------------------------
// Tensor-level forward/backward pairs.
// ---------------------------------------------------------------------------

enum class OpKind { kMatmul, kLayerNorm, kSoftmax, kGelu, kCrossEntropy };

const char* op_kind_name(OpKind kind);

// Saved state a forward call leaves behind for its matching backward call.
struct OpCache {
  OpKind kind{};
  std::vector<Tensor> saved;
  std::vector<std::int64_t> ints;
  float scalar = 0.0f;
};

inline constexpr float kLayerNormEps = 1e-6f;

Tensor matmul(const Tensor& a, const Tensor& b, OpCache* cache = nullptr);
struct MatmulGrads {
  Tensor a;
  Tensor b;
};
MatmulGrads matmul_backward(const Tensor& grad_out, const OpCache& cache);

// Normalizes along the last axis, which must have length gamma.size().
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 float eps = kLayerNormEps, OpCache* cache = nullptr);
struct LayerNormGrads {
  Tensor x;
  Tensor gamma;
  Tensor beta;
};
LayerNormGrads layernorm_backward(const Tensor& grad_out, const OpCache& cache);

// Softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1, OpCache* cache = nullptr);
Tensor softmax_backward(const Tensor& grad_out, const OpCache& cache);

// tanh approximation
Tensor gelu(const Tensor& x, OpCache* cache = nullptr);
Tensor gelu_backward(const Tensor& grad_out, const OpCache& cache);

// Mean negative log-likelihood of `labels` under softmax(logits).
float cross_entropy(const Tensor& logits, std::span<const int> labels,
                    OpCache* cache = nullptr);
// Gradient w.r.t. logits, scaled by `grad_loss`.
Tensor cross_entropy_backward(float grad_loss, const OpCache& cache);

// v <- m*v + g ; p <- p - lr*v
void sgd_step(Tensor& param, const Tensor& grad, Tensor& momentum_buf, float lr,
              float momentum);

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;  // decoupled (AdamW style)
};

struct AdamMoments {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments,
               const AdamConfig& config);

}  // namespace etta
