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
#include <span>
#include <vector>

#include "etta/tensor.hpp"

// Token aggregation by bipartite soft matching.
//
// Image tokens (sequence rows 1..n-1; row 0 is [CLS]) are split by their
// position among image tokens: even positions form the destination set and
// odd positions the source set. Every source token proposes its most
// similar destination; the r proposals with the highest similarity are
// merged by size-weighted averaging and the source rows are dropped. Kept
// rows stay in their original order, so the output is P * T for a fixed
// N_out x N_in matrix P that never touches the [CLS] row.
namespace etta::agg {

struct MergePair {
  std::size_t src = 0;  // sequence row index, >= 1
  std::size_t dst = 0;  // sequence row index, >= 1

  friend bool operator==(const MergePair&, const MergePair&) = default;
};

struct MergePlan {
  std::size_t r = 0;
  std::vector<MergePair> pairs;  // ordered by src
  int layer_idx = -1;

  friend bool operator==(const MergePlan&, const MergePlan&) = default;
};

// Cosine similarities between source candidates (rows) and destination
// candidates (columns).
struct ScoreTable {
  std::vector<std::size_t> src_rows;  // sequence indices
  std::vector<std::size_t> dst_rows;
  std::vector<float> scores;          // [src_rows.size() x dst_rows.size()]

  float at(std::size_t s, std::size_t d) const { return scores[s * dst_rows.size() + d]; }
};

// `keys` is [n_tokens x dim] for one sequence, row 0 being [CLS].
// A zero-norm key scores -1 against everything.
ScoreTable similarity_scores(std::span<const float> keys, std::size_t n_tokens,
                             std::size_t dim);

// Largest r that a sequence of n_tokens rows (including [CLS]) admits.
inline std::size_t max_merge(std::size_t n_tokens) {
  return n_tokens == 0 ? 0 : (n_tokens - 1) / 2;
}

// Throws ScheduleError when r exceeds the number of source candidates.
MergePlan bipartite_soft_matching(const ScoreTable& scores, std::size_t r);

// Throws PlanError unless `plan` is well formed for a sequence of n_tokens.
void validate_plan(const MergePlan& plan, std::size_t n_tokens);

// Each output row as a weighted combination of input rows.
struct MergeMap {
  struct Term {
    std::size_t row;
    float weight;
  };
  std::size_t n_in = 0;
  std::vector<std::vector<Term>> rows;  // one entry per output row
  std::vector<float> out_sizes;
};

MergeMap build_merge_map(const MergePlan& plan, std::span<const float> sizes);

// Single sequence: tokens [n_in x d] -> out [n_out x d].
void merge_rows(const MergeMap& map, std::size_t d, const float* tokens, float* out);
// Accumulates the input gradient; grad_in must be zeroed by the caller or
// hold values to add to.
void merge_rows_backward(const MergeMap& map, std::size_t d, const float* grad_out,
                         float* grad_in);

struct TokenBatch {
  Tensor tokens;  // [B, N, d]
  Tensor sizes;   // [B, N]
};

// One plan per batch row; all plans must remove the same number of rows.
TokenBatch apply_merge(const TokenBatch& batch, std::span<const MergePlan> plans);
Tensor apply_merge_backward(const Tensor& grad_out, const TokenBatch& input,
                            std::span<const MergePlan> plans);

// Dense N_out x N_in operator with P * tokens == merged tokens.
Tensor materialize_P(const MergePlan& plan, std::span<const float> sizes);
Tensor materialize_P(const MergePlan& plan, std::size_t n_tokens);

}  // namespace etta::agg
