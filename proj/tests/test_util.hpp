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

#include <cmath>
#include <cstdint>
#include <functional>

#include "etta/rng.hpp"
#include "etta/tensor.hpp"

namespace etta::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, float scale = 1.0f) {
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(rng.normal()) * scale;
  return t;
}

// Central differences of a scalar objective w.r.t. every element of `x`.
// `x` is perturbed in place and restored.
inline Tensor numeric_grad(const std::function<double()>& objective, Tensor& x,
                           float h = 1e-3f) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = orig + h;
    const float hi = x[i];
    const double up = objective();
    x[i] = orig - h;
    const float lo = x[i];
    const double down = objective();
    x[i] = orig;
    g[i] = static_cast<float>((up - down) / (double(hi) - double(lo)));
  }
  return g;
}

// Fourth-order central stencil. Its truncation error is small enough to
// allow a step large relative to f32 round-off.
inline Tensor numeric_grad4(const std::function<double()>& objective, Tensor& x,
                            float h) {
  Tensor g(x.shape());
  auto at = [&](std::size_t i, float v) {
    x[i] = v;
    return objective();
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    const double f1 = at(i, orig + h) - at(i, orig - h);
    const double f2 = at(i, orig + 2 * h) - at(i, orig - 2 * h);
    x[i] = orig;
    g[i] = static_cast<float>((8.0 * f1 - f2) / (12.0 * double(h)));
  }
  return g;
}

inline double rel_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += double(a[i] - b[i]) * double(a[i] - b[i]);
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom < 1e-12 ? 0.0 : std::sqrt(diff) / denom;
}

// Counts finite-difference coordinates skipped because the probe crossed a
// merge-plan boundary (the objective returned NaN).
struct MaskTally {
  std::size_t masked = 0;
  std::size_t total = 0;

  double fraction() const { return total == 0 ? 0.0 : double(masked) / double(total); }
};

// Like rel_error, but skips coordinates where `numeric` is NaN.
inline double rel_error_masked(const Tensor& analytic, const Tensor& numeric,
                               MaskTally& tally) {
  Tensor a = analytic, b = numeric;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (std::isnan(b[i])) {
      a[i] = b[i] = 0.0f;
      ++tally.masked;
    }
  }
  tally.total += b.size();
  return rel_error(a, b);
}

// Weighted sum of `y` against fixed weights, accumulated in double.
inline double project(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * double(w[i]);
  return s;
}

inline constexpr double kGradTol = 1e-3;
inline constexpr int kGradSeeds = 20;
// Step for fourth-order checks through whole blocks or the full model. At
// 1e-3 the f32 round-off of a deep forward is itself near 1e-3 relative.
inline constexpr float kCompositeStep = 1e-2f;

}  // namespace etta::testing
