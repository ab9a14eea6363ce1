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

#include "etta/tokenagg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "etta/errors.hpp"
#include "etta/parallel.hpp"

namespace etta::agg {

ScoreTable similarity_scores(std::span<const float> keys, std::size_t n_tokens,
                             std::size_t dim) {
  if (keys.size() != n_tokens * dim) {
    throw DimensionError("similarity_scores: expected " + std::to_string(n_tokens * dim) +
                         " key values, got " + std::to_string(keys.size()));
  }
  ScoreTable t;
  for (std::size_t pos = 0; pos + 1 < n_tokens; ++pos) {
    (pos % 2 == 0 ? t.dst_rows : t.src_rows).push_back(pos + 1);
  }
  std::vector<float> norms(n_tokens, 0.0f);
  for (std::size_t i = 1; i < n_tokens; ++i) {
    float s = 0.0f;
    for (std::size_t j = 0; j < dim; ++j) s += keys[i * dim + j] * keys[i * dim + j];
    norms[i] = std::sqrt(s);
  }
  t.scores.assign(t.src_rows.size() * t.dst_rows.size(), -1.0f);
  for (std::size_t s = 0; s < t.src_rows.size(); ++s) {
    const std::size_t a = t.src_rows[s];
    if (norms[a] == 0.0f) continue;
    for (std::size_t d = 0; d < t.dst_rows.size(); ++d) {
      const std::size_t b = t.dst_rows[d];
      if (norms[b] == 0.0f) continue;
      float dot = 0.0f;
      for (std::size_t j = 0; j < dim; ++j) dot += keys[a * dim + j] * keys[b * dim + j];
      t.scores[s * t.dst_rows.size() + d] = dot / (norms[a] * norms[b]);
    }
  }
  return t;
}

MergePlan bipartite_soft_matching(const ScoreTable& scores, std::size_t r) {
  const std::size_t n_src = scores.src_rows.size();
  const std::size_t n_dst = scores.dst_rows.size();
  if (r > n_src) {
    throw ScheduleError("cannot merge r=" + std::to_string(r) + " tokens with only " +
                        std::to_string(n_src) + " source candidates");
  }
  MergePlan plan;
  plan.r = r;
  if (r == 0) return plan;

  std::vector<std::size_t> best_dst(n_src, 0);
  std::vector<float> best_score(n_src, 0.0f);
  for (std::size_t s = 0; s < n_src; ++s) {
    std::size_t arg = 0;
    for (std::size_t d = 1; d < n_dst; ++d) {
      if (scores.at(s, d) > scores.at(s, arg)) arg = d;
    }
    best_dst[s] = arg;
    best_score[s] = scores.at(s, arg);
  }
  std::vector<std::size_t> order(n_src);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return best_score[a] > best_score[b];
  });
  order.resize(r);
  std::sort(order.begin(), order.end());
  for (std::size_t s : order) {
    plan.pairs.push_back({scores.src_rows[s], scores.dst_rows[best_dst[s]]});
  }
  return plan;
}

void validate_plan(const MergePlan& plan, std::size_t n_tokens) {
  if (plan.pairs.size() != plan.r) {
    throw PlanError("plan declares r=" + std::to_string(plan.r) + " but has " +
                    std::to_string(plan.pairs.size()) + " pairs");
  }
  if (plan.r > max_merge(n_tokens)) {
    throw PlanError("plan removes " + std::to_string(plan.r) + " rows from a sequence of " +
                    std::to_string(n_tokens));
  }
  std::vector<char> is_src(n_tokens, 0);
  for (const auto& p : plan.pairs) {
    if (p.src == 0 || p.dst == 0) throw PlanError("plan touches the [CLS] row");
    if (p.src >= n_tokens || p.dst >= n_tokens) {
      throw PlanError("plan index out of range for " + std::to_string(n_tokens) + " rows");
    }
    if (is_src[p.src]) throw PlanError("duplicate source row " + std::to_string(p.src));
    is_src[p.src] = 1;
  }
  for (const auto& p : plan.pairs) {
    if (is_src[p.dst]) throw PlanError("row " + std::to_string(p.dst) + " is both source and destination");
  }
}

MergeMap build_merge_map(const MergePlan& plan, std::span<const float> sizes) {
  const std::size_t n = sizes.size();
  validate_plan(plan, n);
  std::vector<char> is_src(n, 0);
  std::vector<std::vector<std::size_t>> sources(n);
  for (const auto& p : plan.pairs) {
    is_src[p.src] = 1;
    sources[p.dst].push_back(p.src);
  }
  MergeMap map;
  map.n_in = n;
  map.rows.reserve(n - plan.r);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_src[i]) continue;
    if (sources[i].empty()) {
      map.rows.push_back({{i, 1.0f}});
      map.out_sizes.push_back(sizes[i]);
      continue;
    }
    float total = sizes[i];
    for (std::size_t s : sources[i]) total += sizes[s];
    std::vector<MergeMap::Term> terms{{i, sizes[i] / total}};
    for (std::size_t s : sources[i]) terms.push_back({s, sizes[s] / total});
    map.rows.push_back(std::move(terms));
    map.out_sizes.push_back(total);
  }
  return map;
}

void merge_rows(const MergeMap& map, std::size_t d, const float* tokens, float* out) {
  for (std::size_t o = 0; o < map.rows.size(); ++o) {
    float* dst = out + o * d;
    const auto& terms = map.rows[o];
    if (terms.size() == 1 && terms[0].weight == 1.0f) {
      std::copy(tokens + terms[0].row * d, tokens + (terms[0].row + 1) * d, dst);
      continue;
    }
    std::fill(dst, dst + d, 0.0f);
    for (const auto& t : terms) {
      const float* src = tokens + t.row * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += t.weight * src[j];
    }
  }
}

void merge_rows_backward(const MergeMap& map, std::size_t d, const float* grad_out,
                         float* grad_in) {
  for (std::size_t o = 0; o < map.rows.size(); ++o) {
    const float* g = grad_out + o * d;
    for (const auto& t : map.rows[o]) {
      float* dst = grad_in + t.row * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += t.weight * g[j];
    }
  }
}

namespace {

void check_batch(const TokenBatch& batch, std::span<const MergePlan> plans) {
  if (batch.tokens.rank() != 3) throw DimensionError("apply_merge: tokens must be [B,N,d]");
  const std::size_t b = batch.tokens.dim(0), n = batch.tokens.dim(1);
  expect_shape(batch.sizes, {b, n}, "apply_merge sizes");
  if (plans.size() != b) {
    throw PlanError("apply_merge: " + std::to_string(plans.size()) + " plans for batch of " +
                    std::to_string(b));
  }
  for (const auto& p : plans) {
    if (p.r != plans[0].r) throw PlanError("apply_merge: plans disagree on r");
  }
}

}  // namespace

TokenBatch apply_merge(const TokenBatch& batch, std::span<const MergePlan> plans) {
  check_batch(batch, plans);
  const std::size_t b = batch.tokens.dim(0), n = batch.tokens.dim(1),
                    d = batch.tokens.dim(2);
  const std::size_t r = plans.empty() ? 0 : plans[0].r;
  if (r == 0) {
    for (const auto& p : plans) validate_plan(p, n);
    return batch;
  }
  TokenBatch out{Tensor({b, n - r, d}), Tensor({b, n - r})};
  parallel_for(b, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const MergeMap map = build_merge_map(plans[i], batch.sizes.row(i));
      merge_rows(map, d, batch.tokens.data() + i * n * d, out.tokens.data() + i * (n - r) * d);
      std::copy(map.out_sizes.begin(), map.out_sizes.end(), out.sizes.data() + i * (n - r));
    }
  });
  return out;
}

Tensor apply_merge_backward(const Tensor& grad_out, const TokenBatch& input,
                            std::span<const MergePlan> plans) {
  check_batch(input, plans);
  const std::size_t b = input.tokens.dim(0), n = input.tokens.dim(1),
                    d = input.tokens.dim(2);
  const std::size_t r = plans.empty() ? 0 : plans[0].r;
  expect_shape(grad_out, {b, n - r, d}, "apply_merge_backward grad_out");
  Tensor grad_in({b, n, d});
  parallel_for(b, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const MergeMap map = build_merge_map(plans[i], input.sizes.row(i));
      merge_rows_backward(map, d, grad_out.data() + i * (n - r) * d, grad_in.data() + i * n * d);
    }
  });
  return grad_in;
}

Tensor materialize_P(const MergePlan& plan, std::span<const float> sizes) {
  const MergeMap map = build_merge_map(plan, sizes);
  Tensor p({map.rows.size(), map.n_in});
  for (std::size_t o = 0; o < map.rows.size(); ++o) {
    for (const auto& t : map.rows[o]) p.at(o, t.row) += t.weight;
  }
  return p;
}

Tensor materialize_P(const MergePlan& plan, std::size_t n_tokens) {
  std::vector<float> ones(n_tokens, 1.0f);
  return materialize_P(plan, ones);
}

}  // namespace etta::agg
