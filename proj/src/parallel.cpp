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

#include "etta/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace etta {

namespace {

std::size_t read_env_threads() {
  const char* env = std::getenv("ETTA_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    long v = std::stol(env);
    return v < 1 ? 1 : static_cast<std::size_t>(v);
  } catch (...) {
    return 1;
  }
}

std::size_t& configured_workers() {
  static std::size_t n = read_env_threads();
  return n;
}

}  // namespace

std::size_t worker_count() { return configured_workers(); }

void set_worker_count(std::size_t n) { configured_workers() = n < 1 ? 1 : n; }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
      std::size_t begin = w * chunk;
      std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      threads.emplace_back([&fn, &errors, w, begin, end] {
        try {
          fn(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    try {
      fn(0, std::min(n, chunk));
    } catch (...) {
      errors[0] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace etta
