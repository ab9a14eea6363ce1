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

#include "etta/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#ifdef __FMA__
#include <immintrin.h>
#endif
#include <numbers>
#include <string>

#include "etta/errors.hpp"

namespace etta {
namespace kern {

namespace {

using v8 = float __attribute__((vector_size(32)));

inline v8 load8(const float* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(float* p, v8 v) { std::memcpy(p, &v, sizeof v); }

// The build disables implicit contraction, so every path rounds the same
// way no matter how rows are split across tiles or threads.
inline v8 madd(float a, v8 b, v8 c) {
#ifdef __FMA__
  return _mm256_fmadd_ps(_mm256_set1_ps(a), b, c);
#else
  return a * b + c;
#endif
}
inline float madd(float a, float b, float c) {
#ifdef __FMA__
  return std::fma(a, b, c);
#else
  return a * b + c;
#endif
}

// Register tile of IB rows by 8*JV columns of C. Every output element is
// accumulated over p in increasing order, so tiling never changes results.
template <std::size_t IB, std::size_t JV>
inline void tile_nn(std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                    bool accumulate) {
  v8 acc[IB][JV];
  for (std::size_t r = 0; r < IB; ++r)
    for (std::size_t j = 0; j < JV; ++j) acc[r][j] = accumulate ? load8(c + r * n + 8 * j) : v8{};
  for (std::size_t p = 0; p < k; ++p) {
    v8 bv[JV];
    for (std::size_t j = 0; j < JV; ++j) bv[j] = load8(b + p * n + 8 * j);
    for (std::size_t r = 0; r < IB; ++r) {
      const float av = a[r * k + p];
      for (std::size_t j = 0; j < JV; ++j) acc[r][j] = madd(av, bv[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < IB; ++r)
    for (std::size_t j = 0; j < JV; ++j) store8(c + r * n + 8 * j, acc[r][j]);
}

template <std::size_t IB>
inline void column_nn(std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                      bool accumulate) {
  float acc[IB];
  for (std::size_t r = 0; r < IB; ++r) acc[r] = accumulate ? c[r * n] : 0.0f;
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t r = 0; r < IB; ++r) acc[r] = madd(a[r * k + p], b[p * n], acc[r]);
  for (std::size_t r = 0; r < IB; ++r) c[r * n] = acc[r];
}

template <std::size_t IB>
inline void rows_nn(std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                    bool accumulate) {
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32) tile_nn<IB, 4>(n, k, a, b + j, c + j, accumulate);
  for (; j + 16 <= n; j += 16) tile_nn<IB, 2>(n, k, a, b + j, c + j, accumulate);
  for (; j + 8 <= n; j += 8) tile_nn<IB, 1>(n, k, a, b + j, c + j, accumulate);
  for (; j < n; ++j) column_nn<IB>(n, k, a, b + j, c + j, accumulate);
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) rows_nn<4>(n, k, a + i * k, b, c + i * n, accumulate);
  for (; i < m; ++i) rows_nn<1>(n, k, a + i * k, b, c + i * n, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  thread_local std::vector<float> at;
  at.resize(m * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  }
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  thread_local std::vector<float> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void linear(std::size_t rows, std::size_t in, std::size_t out, const float* x,
            const float* w, const float* bias, float* y) {
  if (bias != nullptr) {
    for (std::size_t i = 0; i < rows; ++i) std::copy(bias, bias + out, y + i * out);
    gemm_nn(rows, out, in, x, w, y, true);
  } else {
    gemm_nn(rows, out, in, x, w, y, false);
  }
}

void layernorm_forward(std::size_t rows, std::size_t d, const float* x,
                       const float* gamma, const float* beta, float eps,
                       float* y, float* xhat, float* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    const float mu = static_cast<float>(mean);
    float* hr = xhat + r * d;
    float* yr = y + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * rs;
      yr[j] = hr[j] * gamma[j] + beta[j];
    }
    rstd[r] = rs;
  }
}

void layernorm_backward(std::size_t rows, std::size_t d, const float* dy,
                        const float* xhat, const float* rstd,
                        const float* gamma, float* dx, float* dgamma,
                        float* dbeta, bool accumulate) {
  const float inv_d = 1.0f / static_cast<float>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* dyr = dy + r * d;
    const float* hr = xhat + r * d;
    float mean_g = 0.0f;
    float mean_gh = 0.0f;
    for (std::size_t j = 0; j < d; ++j) {
      const float g = dyr[j] * gamma[j];
      mean_g += g;
      mean_gh += g * hr[j];
      if (dgamma) dgamma[j] += dyr[j] * hr[j];
      if (dbeta) dbeta[j] += dyr[j];
    }
    mean_g *= inv_d;
    mean_gh *= inv_d;
    float* dxr = dx + r * d;
    const float rs = rstd[r];
    for (std::size_t j = 0; j < d; ++j) {
      const float v = rs * (dyr[j] * gamma[j] - mean_g - hr[j] * mean_gh);
      dxr[j] = accumulate ? dxr[j] + v : v;
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t len, float* x) {
  for (std::size_t r = 0; r < rows; ++r) {
    float* xr = x + r * len;
    float mx = *std::max_element(xr, xr + len);
    float sum = 0.0f;
    for (std::size_t j = 0; j < len; ++j) {
      xr[j] = std::exp(xr[j] - mx);
      sum += xr[j];
    }
    const float inv = 1.0f / sum;
    for (std::size_t j = 0; j < len; ++j) xr[j] *= inv;
  }
}

void softmax_rows_backward(std::size_t rows, std::size_t len, const float* y,
                           const float* dy, float* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* yr = y + r * len;
    const float* dyr = dy + r * len;
    float dot = 0.0f;
    for (std::size_t j = 0; j < len; ++j) dot += yr[j] * dyr[j];
    float* dxr = dx + r * len;
    for (std::size_t j = 0; j < len; ++j) dxr[j] = yr[j] * (dyr[j] - dot);
  }
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

// 0.5 * (1 + tanh(u)) is the logistic function of 2u; expf is much
// cheaper than tanhf.
namespace {
inline float gelu_gate(float v) {
  const float u = kGeluC * (v + kGeluA * v * v * v);
  return 1.0f / (1.0f + std::exp(-2.0f * u));
}
}  // namespace

void gelu_forward(std::size_t n, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * gelu_gate(x[i]);
}

void gelu_backward(std::size_t n, const float* x, const float* dy, float* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x[i];
    const float s = gelu_gate(v);
    const float dinner = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
    dx[i] = dy[i] * (s + 2.0f * v * s * (1.0f - s) * dinner);
  }
}

}  // namespace kern

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kLayerNorm: return "layernorm";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kGelu: return "gelu";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

namespace {

void expect_kind(const OpCache& cache, OpKind kind) {
  if (cache.kind != kind) {
    throw StateError(std::string("backward for ") + op_kind_name(kind) +
                     " given a cache produced by " + op_kind_name(cache.kind));
  }
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, OpCache* cache) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  kern::gemm_nn(m, n, k, a.data(), b.data(), c.data());
  check_finite(c, "matmul");
  if (cache) *cache = OpCache{OpKind::kMatmul, {a, b}, {}, 0.0f};
  return c;
}

MatmulGrads matmul_backward(const Tensor& grad_out, const OpCache& cache) {
  expect_kind(cache, OpKind::kMatmul);
  const Tensor& a = cache.saved.at(0);
  const Tensor& b = cache.saved.at(1);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  expect_shape(grad_out, {m, n}, "matmul_backward grad_out");
  MatmulGrads g{Tensor({m, k}), Tensor({k, n})};
  kern::gemm_nt(m, k, n, grad_out.data(), b.data(), g.a.data());
  kern::gemm_tn(k, n, m, a.data(), grad_out.data(), g.b.data());
  return g;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                 OpCache* cache) {
  if (x.empty() || gamma.rank() != 1 || x.shape().back() != gamma.dim(0) ||
      !gamma.same_shape(beta)) {
    throw DimensionError("layernorm: x " + shape_str(x.shape()) + ", gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  if (!(eps > 0.0f)) throw ConfigError("layernorm: eps must be positive");
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = x.size() / d;
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  Tensor rstd({rows});
  kern::layernorm_forward(rows, d, x.data(), gamma.data(), beta.data(), eps, y.data(),
                          xhat.data(), rstd.data());
  check_finite(y, "layernorm");
  if (cache) *cache = OpCache{OpKind::kLayerNorm, {xhat, rstd, gamma}, {}, eps};
  return y;
}

LayerNormGrads layernorm_backward(const Tensor& grad_out, const OpCache& cache) {
  expect_kind(cache, OpKind::kLayerNorm);
  const Tensor& xhat = cache.saved.at(0);
  const Tensor& rstd = cache.saved.at(1);
  const Tensor& gamma = cache.saved.at(2);
  expect_shape(grad_out, xhat.shape(), "layernorm_backward grad_out");
  const std::size_t d = gamma.dim(0);
  LayerNormGrads g{Tensor(xhat.shape()), Tensor({d}), Tensor({d})};
  kern::layernorm_backward(rstd.dim(0), d, grad_out.data(), xhat.data(), rstd.data(),
                           gamma.data(), g.x.data(), g.gamma.data(), g.beta.data());
  return g;
}

namespace {

struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout layout_for(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range");
  AxisLayout l;
  for (int i = 0; i < axis; ++i) l.outer *= shape[i];
  l.len = shape[axis];
  for (int i = axis + 1; i < rank; ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis, OpCache* cache) {
  if (x.empty()) throw DimensionError("softmax of empty tensor");
  const AxisLayout l = layout_for(x.shape(), axis);
  Tensor y = x;
  if (l.inner == 1) {
    kern::softmax_rows(l.outer, l.len, y.data());
  } else {
    std::vector<float> buf(l.len);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        float* base = y.data() + o * l.len * l.inner + i;
        for (std::size_t j = 0; j < l.len; ++j) buf[j] = base[j * l.inner];
        kern::softmax_rows(1, l.len, buf.data());
        for (std::size_t j = 0; j < l.len; ++j) base[j * l.inner] = buf[j];
      }
    }
  }
  check_finite(y, "softmax");
  if (cache) {
    *cache = OpCache{OpKind::kSoftmax, {y}, {static_cast<std::int64_t>(axis)}, 0.0f};
  }
  return y;
}

Tensor softmax_backward(const Tensor& grad_out, const OpCache& cache) {
  expect_kind(cache, OpKind::kSoftmax);
  const Tensor& y = cache.saved.at(0);
  expect_shape(grad_out, y.shape(), "softmax_backward grad_out");
  const AxisLayout l = layout_for(y.shape(), static_cast<int>(cache.ints.at(0)));
  Tensor dx(y.shape());
  if (l.inner == 1) {
    kern::softmax_rows_backward(l.outer, l.len, y.data(), grad_out.data(), dx.data());
    return dx;
  }
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.len * l.inner + i;
      float dot = 0.0f;
      for (std::size_t j = 0; j < l.len; ++j) {
        dot += y[base + j * l.inner] * grad_out[base + j * l.inner];
      }
      for (std::size_t j = 0; j < l.len; ++j) {
        const std::size_t at = base + j * l.inner;
        dx[at] = y[at] * (grad_out[at] - dot);
      }
    }
  }
  return dx;
}

Tensor gelu(const Tensor& x, OpCache* cache) {
  if (x.empty()) throw DimensionError("gelu of empty tensor");
  Tensor y(x.shape());
  kern::gelu_forward(x.size(), x.data(), y.data());
  check_finite(y, "gelu");
  if (cache) *cache = OpCache{OpKind::kGelu, {x}, {}, 0.0f};
  return y;
}

Tensor gelu_backward(const Tensor& grad_out, const OpCache& cache) {
  expect_kind(cache, OpKind::kGelu);
  const Tensor& x = cache.saved.at(0);
  expect_shape(grad_out, x.shape(), "gelu_backward grad_out");
  Tensor dx(x.shape());
  kern::gelu_backward(x.size(), x.data(), grad_out.data(), dx.data());
  return dx;
}

float cross_entropy(const Tensor& logits, std::span<const int> labels, OpCache* cache) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  Tensor probs = logits;
  kern::softmax_rows(batch, classes, probs.data());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const float* zr = logits.data() + b * classes;
    const float mx = *std::max_element(zr, zr + classes);
    double lse = 0.0;
    for (std::size_t c = 0; c < classes; ++c) lse += std::exp(double(zr[c]) - mx);
    loss += (std::log(lse) + mx) - zr[labels[b]];
  }
  loss /= static_cast<double>(batch);
  if (cache) {
    OpCache c{OpKind::kCrossEntropy, {probs}, {}, 0.0f};
    c.ints.assign(labels.begin(), labels.end());
    *cache = std::move(c);
  }
  return static_cast<float>(loss);
}

Tensor cross_entropy_backward(float grad_loss, const OpCache& cache) {
  expect_kind(cache, OpKind::kCrossEntropy);
  Tensor d = cache.saved.at(0);
  const std::size_t batch = d.dim(0), classes = d.dim(1);
  const float scale = grad_loss / static_cast<float>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    d.at(b, static_cast<std::size_t>(cache.ints[b])) -= 1.0f;
    for (std::size_t c = 0; c < classes; ++c) d.at(b, c) *= scale;
  }
  return d;
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& momentum_buf, float lr,
              float momentum) {
  if (!param.same_shape(grad)) {
    throw DimensionError("sgd_step: param " + shape_str(param.shape()) + " vs grad " +
                         shape_str(grad.shape()));
  }
  if (lr < 0.0f) throw ConfigError("sgd_step: negative learning rate");
  if (momentum_buf.empty()) momentum_buf = Tensor::zeros(param.shape());
  expect_shape(momentum_buf, param.shape(), "sgd_step momentum buffer");
  for (std::size_t i = 0; i < param.size(); ++i) {
    momentum_buf[i] = momentum * momentum_buf[i] + grad[i];
    param[i] -= lr * momentum_buf[i];
  }
}

void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments,
               const AdamConfig& config) {
  if (!param.same_shape(grad)) {
    throw DimensionError("adam_step: param " + shape_str(param.shape()) + " vs grad " +
                         shape_str(grad.shape()));
  }
  if (!(config.lr > 0.0f)) throw ConfigError("adam_step: learning rate must be positive");
  if (moments.m.empty()) {
    moments.m = Tensor::zeros(param.shape());
    moments.v = Tensor::zeros(param.shape());
  }
  ++moments.step;
  const double bc1 = 1.0 - std::pow(double(config.beta1), double(moments.step));
  const double bc2 = 1.0 - std::pow(double(config.beta2), double(moments.step));
  const float step_size = static_cast<float>(config.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    moments.m[i] = config.beta1 * moments.m[i] + (1.0f - config.beta1) * g;
    moments.v[i] = config.beta2 * moments.v[i] + (1.0f - config.beta2) * g * g;
    const float denom = std::sqrt(moments.v[i] * inv_bc2) + config.eps;
    if (config.weight_decay > 0.0f) param[i] -= config.lr * config.weight_decay * param[i];
    param[i] -= step_size * moments.m[i] / denom;
  }
}

}  // namespace etta
