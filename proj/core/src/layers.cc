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

#include "blockfuse/layers.h"

#include <cmath>

#include "blockfuse/errors.h"

namespace blockfuse {

const char* activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kReLU:
      return "relu";
    case ActivationKind::kReLU6:
      return "relu6";
    case ActivationKind::kIdentity:
      break;
  }
  return "identity";
}

ActivationKind parse_activation(const std::string& name) {
  if (name == "relu") return ActivationKind::kReLU;
  if (name == "relu6") return ActivationKind::kReLU6;
  if (name == "identity") return ActivationKind::kIdentity;
  throw ParseError("unknown activation kind '" + name + "'");
}

ConvLayer ConvLayer::make(int c_in, int c_out, int kernel, int stride,
                          int padding, int groups, bool with_bias) {
  ConvLayer conv;
  conv.c_in = c_in;
  conv.c_out = c_out;
  conv.kernel = kernel;
  conv.stride = stride;
  conv.padding = padding;
  conv.groups = groups;
  conv.check_hyper();
  conv.weights = Tensor(conv.weight_shape());
  if (with_bias) conv.bias.assign(c_out, 0.0);
  return conv;
}

void ConvLayer::check_hyper() const {
  if (c_in <= 0 || c_out <= 0) throw ShapeError("conv channels must be positive");
  if (kernel <= 0) throw ShapeError("conv kernel must be positive");
  if (stride <= 0) throw ShapeError("conv stride must be positive");
  if (padding < 0) throw ShapeError("conv padding must be non-negative");
  if (groups <= 0) throw ShapeError("conv groups must be positive");
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw ShapeError("conv channels (" + std::to_string(c_in) + "->" +
                     std::to_string(c_out) + ") not divisible by groups " +
                     std::to_string(groups));
  }
}

void ConvLayer::check() const {
  check_hyper();
  if (weights.shape() != weight_shape()) {
    throw ShapeError("conv weights have shape " + to_string(weights.shape()) +
                     ", expected " + to_string(weight_shape()));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != c_out) {
    throw ShapeError("conv bias has " + std::to_string(bias.size()) +
                     " entries, expected " + std::to_string(c_out));
  }
}

BatchNormLayer BatchNormLayer::identity(int channels, double epsilon) {
  BatchNormLayer bn;
  bn.gamma.assign(channels, 1.0);
  bn.beta.assign(channels, 0.0);
  bn.running_mean.assign(channels, 0.0);
  bn.running_var.assign(channels, 1.0);
  bn.epsilon = epsilon;
  return bn;
}

double BatchNormLayer::scale(int c) const {
  return gamma[c] / std::sqrt(running_var[c] + epsilon);
}

void BatchNormLayer::check() const {
  const std::size_t c = gamma.size();
  if (c == 0) throw ShapeError("batch norm has zero channels");
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batch norm parameter lengths disagree");
  }
  for (double v : running_var) {
    if (!(v >= 0.0)) throw NumericError("batch norm running_var is negative");
  }
  if (!(epsilon >= 0.0)) throw NumericError("batch norm epsilon is negative");
}

LinearLayer LinearLayer::make(int in, int out, bool with_bias) {
  if (in <= 0 || out <= 0) throw ShapeError("linear sizes must be positive");
  LinearLayer fc;
  fc.in = in;
  fc.out = out;
  fc.weights.assign(static_cast<std::size_t>(in) * out, 0.0);
  if (with_bias) fc.bias.assign(out, 0.0);
  return fc;
}

void LinearLayer::check() const {
  if (in <= 0 || out <= 0) throw ShapeError("linear sizes must be positive");
  if (weights.size() != static_cast<std::size_t>(in) * out) {
    throw ShapeError("linear weights have " + std::to_string(weights.size()) +
                     " entries, expected " + std::to_string(in * out));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != out) {
    throw ShapeError("linear bias length mismatch");
  }
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

const char* op_name(const Layer& layer) {
  return std::visit(
      Overloaded{[](const ConvLayer&) { return "conv"; },
                 [](const BatchNormLayer&) { return "bn"; },
                 [](const ActivationLayer&) { return "act"; },
                 [](const AvgPoolLayer&) { return "avgpool"; },
                 [](const LinearLayer&) { return "linear"; },
                 [](const AddLayer&) { return "add"; },
                 [](const FlattenLayer&) { return "flatten"; }},
      layer);
}

int arity(const Layer& layer) {
  return std::holds_alternative<AddLayer>(layer) ? 2 : 1;
}

bool has_parameters(const Layer& layer) {
  return std::holds_alternative<ConvLayer>(layer) ||
         std::holds_alternative<BatchNormLayer>(layer) ||
         std::holds_alternative<LinearLayer>(layer);
}

bool same_structure(const Layer& a, const Layer& b) {
  if (a.index() != b.index()) return false;
  if (const auto* x = std::get_if<ConvLayer>(&a)) {
    const auto& y = std::get<ConvLayer>(b);
    return x->c_in == y.c_in && x->c_out == y.c_out && x->kernel == y.kernel &&
           x->stride == y.stride && x->padding == y.padding &&
           x->groups == y.groups && x->has_bias() == y.has_bias();
  }
  if (const auto* x = std::get_if<BatchNormLayer>(&a)) {
    const auto& y = std::get<BatchNormLayer>(b);
    return x->channels() == y.channels() && x->epsilon == y.epsilon;
  }
  if (const auto* x = std::get_if<ActivationLayer>(&a)) {
    return x->kind == std::get<ActivationLayer>(b).kind;
  }
  if (const auto* x = std::get_if<AvgPoolLayer>(&a)) {
    const auto& y = std::get<AvgPoolLayer>(b);
    return x->kernel == y.kernel && x->stride == y.stride;
  }
  if (const auto* x = std::get_if<LinearLayer>(&a)) {
    const auto& y = std::get<LinearLayer>(b);
    return x->in == y.in && x->out == y.out && x->has_bias() == y.has_bias();
  }
  return true;
}

}  // namespace blockfuse
