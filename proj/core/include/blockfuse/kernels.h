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

#include <span>

#include "blockfuse/layers.h"
#include "blockfuse/tensor.h"

namespace blockfuse {

struct ExecOptions {
  /// kF32 rounds every layer output to float.
  Precision precision = Precision::kF64;
  /// Reject non-finite inputs with NumericError.
  bool checked = true;
};

/// floor((in + 2 * padding - kernel) / stride) + 1; throws ShapeError when the
/// window does not fit.
int conv_out_size(int in, int kernel, int stride, int padding);

/// Shape inference for one layer. Throws ShapeError naming the offending axis.
Shape output_shape(const Layer& layer, std::span<const Shape> inputs);

/// Reference executor. Convolution is direct summation so it can serve as
/// the oracle for every merge.
Tensor execute_layer(const Layer& layer, std::span<const Tensor* const> inputs,
                     const ExecOptions& options = {});
Tensor execute_layer(const Layer& layer, const Tensor& x,
                     const ExecOptions& options = {});
Tensor execute_layer(const Layer& layer, const Tensor& a, const Tensor& b,
                     const ExecOptions& options = {});

/// Individual kernels, exposed for the autodiff module.
Tensor conv2d(const ConvLayer& conv, const Tensor& x);
Tensor batch_norm(const BatchNormLayer& bn, const Tensor& x);
Tensor activation(ActivationKind kind, const Tensor& x);
Tensor avg_pool(const AvgPoolLayer& pool, const Tensor& x);
Tensor linear(const LinearLayer& fc, const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor flatten(const Tensor& x);

}  // namespace blockfuse
