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
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace etta {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f32 array. A default-constructed Tensor is the empty
// sentinel (rank 0, no storage); every other tensor has dims >= 1 and
// exactly product(shape) elements.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);

  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> span() { return data_; }
  std::span<const float> span() const { return data_; }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

  // Row `i` of the tensor viewed as [numel / last_dim, last_dim].
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  Tensor reshaped(Shape shape) const;
  void fill(float v);

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Throws DimensionError unless `t` has exactly `expected` shape.
void expect_shape(const Tensor& t, const Shape& expected, const char* what);

float max_abs_diff(const Tensor& a, const Tensor& b);

// Elementwise helpers used by the optimizers and gradient accumulation.
void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& t, float s);

}  // namespace etta
