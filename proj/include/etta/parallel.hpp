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
#include <functional>

namespace etta {

// Number of worker threads used by parallel_for. Read once from the
// ETTA_THREADS environment variable (default 1); set_worker_count overrides.
std::size_t worker_count();
void set_worker_count(std::size_t n);

// Splits [0, n) into at most worker_count() contiguous chunks and runs
// fn(begin, end) on each. Chunk boundaries depend only on n and the worker
// count, and callers write to disjoint outputs, so results do not depend on
// scheduling.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace etta
