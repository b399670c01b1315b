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

#include <string>
#include <variant>
#include <vector>

#include "blockfuse/tensor.h"

namespace blockfuse {

enum class ActivationKind { kReLU, kReLU6, kIdentity };

const char* activation_name(ActivationKind kind);
ActivationKind parse_activation(const std::string& name);

inline double activate(ActivationKind kind, double z) {
  switch (kind) {
    case ActivationKind::kReLU:
      return z > 0.0 ? z : 0.0;
    case ActivationKind::kReLU6:
      return z > 0.0 ? (z < 6.0 ? z : 6.0) : 0.0;
    case ActivationKind::kIdentity:
      break;
  }
  return z;
}

/// d activate / dz, with the subgradient 0 taken at the kinks.
inline double activate_grad(ActivationKind kind, double z) {
  switch (kind) {
    case ActivationKind::kReLU:
      return z > 0.0 ? 1.0 : 0.0;
    case ActivationKind::kReLU6:
      return (z > 0.0 && z < 6.0) ? 1.0 : 0.0;
    case ActivationKind::kIdentity:
      break;
  }
  return 1.0;
}

/// Square-kernel 2-D convolution with isotropic stride and symmetric zero
/// padding. Weights are (c_out, c_in / groups, kernel, kernel); an empty bias
/// means the layer has none.
struct ConvLayer {
  int c_in = 1;
  int c_out = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  Tensor weights;
  std::vector<double> bias;

  /// Zero-initialised layer with consistent weight dims.
  static ConvLayer make(int c_in, int c_out, int kernel, int stride = 1,
                        int padding = 0, int groups = 1, bool with_bias = false);

  bool has_bias() const { return !bias.empty(); }
  bool is_depthwise() const {
    return groups > 1 && groups == c_in && groups == c_out;
  }
  Shape weight_shape() const { return {c_out, c_in / groups, kernel, kernel}; }
  double& w(int o, int i, int kh, int kw) { return weights.at(o, i, kh, kw); }
  double w(int o, int i, int kh, int kw) const {
    return weights.at(o, i, kh, kw);
  }

  /// Throws ShapeError naming the first violated invariant.
  void check() const;
  /// As check(), without looking at weights or bias.
  void check_hyper() const;
};

/// Inference-mode batch normalization (frozen statistics).
struct BatchNormLayer {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;

  /// gamma = 1, beta = 0, mean = 0, var = 1.
  static BatchNormLayer identity(int channels, double epsilon = 1e-5);

  int channels() const { return static_cast<int>(gamma.size()); }
  double scale(int c) const;  // gamma / sqrt(var + eps)
  void check() const;
};

struct ActivationLayer {
  ActivationKind kind = ActivationKind::kReLU;
};

/// Average pooling without padding.
struct AvgPoolLayer {
  int kernel = 1;
  int stride = 1;
};

/// Fully connected layer over (n, in, 1, 1) inputs. Weights row-major
/// (out, in).
struct LinearLayer {
  int in = 1;
  int out = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  static LinearLayer make(int in, int out, bool with_bias = true);
  bool has_bias() const { return !bias.empty(); }
  void check() const;
};

struct AddLayer {};

/// (n, c, h, w) -> (n, c*h*w, 1, 1).
struct FlattenLayer {};

using Layer = std::variant<ConvLayer, BatchNormLayer, ActivationLayer,
                           AvgPoolLayer, LinearLayer, AddLayer, FlattenLayer>;

/// Graph-file op tag: conv, bn, act, avgpool, linear, add, flatten.
const char* op_name(const Layer& layer);
int arity(const Layer& layer);
bool has_parameters(const Layer& layer);

/// Same op and hyper-parameters; parameter values are ignored.
bool same_structure(const Layer& a, const Layer& b);

}  // namespace blockfuse
