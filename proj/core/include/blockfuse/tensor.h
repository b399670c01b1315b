// Copyright 2026 The Blockfuse Authors. All Rights Reserved.
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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace blockfuse {

enum class Precision { kF32, kF64 };

const char* precision_name(Precision p);
Precision parse_precision(const std::string& name);

/// (n, c, h, w).
using Shape = std::array<int, 4>;

std::string to_string(const Shape& shape);
std::int64_t num_elements(const Shape& shape);

/// Dense rank-4 array stored row-major in (n, c, h, w) order.
///
/// Values are held as doubles regardless of precision; a kF32 tensor keeps
/// every element exactly representable as a float, which is how the
/// executor emulates single-precision deployment.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0,
                  Precision precision = Precision::kF64);
  /// Throws ShapeError when data.size() != product(shape).
  Tensor(Shape shape, std::vector<double> data,
         Precision precision = Precision::kF64);

  /// As the data constructor, and additionally rejects NaN/Inf with a
  /// NumericError.
  static Tensor checked(Shape shape, std::vector<double> data,
                        Precision precision = Precision::kF64);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  Precision precision() const { return precision_; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  bool all_finite() const;

  /// Rounds every element to float when precision is kF32; no-op for kF64.
  void round_to_precision();
  Tensor with_precision(Precision precision) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
  Precision precision_ = Precision::kF64;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);

}  // namespace blockfuse
