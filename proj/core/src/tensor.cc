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

#include "blockfuse/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "blockfuse/errors.h"

namespace blockfuse {

const char* precision_name(Precision p) {
  return p == Precision::kF32 ? "f32" : "f64";
}

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw Error("unknown precision '" + name + "' (expected f32 or f64)");
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(" << shape[0] << "," << shape[1] << "," << shape[2] << ","
     << shape[3] << ")";
  return os.str();
}

std::int64_t num_elements(const Shape& shape) {
  std::int64_t count = 1;
  for (int d : shape) count *= d;
  return count;
}

namespace {

void check_dims(const Shape& shape) {
  static const char* kAxis[] = {"batch", "channel", "height", "width"};
  for (int i = 0; i < 4; ++i) {
    if (shape[i] < 0) {
      throw ShapeError(std::string("negative ") + kAxis[i] +
                       " dimension in " + to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, Precision precision)
    : shape_(shape), precision_(precision) {
  check_dims(shape);
  data_.assign(static_cast<std::size_t>(num_elements(shape)), fill);
  round_to_precision();
}

Tensor::Tensor(Shape shape, std::vector<double> data, Precision precision)
    : shape_(shape), data_(std::move(data)), precision_(precision) {
  check_dims(shape);
  if (static_cast<std::int64_t>(data_.size()) != num_elements(shape)) {
    throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                     " elements but shape " + to_string(shape) + " needs " +
                     std::to_string(num_elements(shape)));
  }
  round_to_precision();
}

Tensor Tensor::checked(Shape shape, std::vector<double> data,
                       Precision precision) {
  Tensor t(shape, std::move(data), precision);
  if (!t.all_finite()) {
    throw NumericError("non-finite value in tensor of shape " +
                       to_string(shape));
  }
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::round_to_precision() {
  if (precision_ != Precision::kF32) return;
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::with_precision(Precision precision) const {
  Tensor out = *this;
  out.precision_ = precision;
  out.round_to_precision();
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot compare tensors of shape " + to_string(a.shape()) +
                     " and " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace blockfuse
