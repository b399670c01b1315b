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

#include "blockfuse/kernels.h"

#include <string>

#include "blockfuse/errors.h"

namespace blockfuse {

namespace {

std::string axis_mismatch(const char* what, const char* axis, int got,
                          int expected) {
  return std::string(what) + ": " + axis + " axis is " + std::to_string(got) +
         ", expected " + std::to_string(expected);
}

}  // namespace

int conv_out_size(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError("window of size " + std::to_string(kernel) +
                     " does not fit input extent " + std::to_string(in) +
                     " with padding " + std::to_string(padding));
  }
  return span / stride + 1;
}

Shape output_shape(const Layer& layer, std::span<const Shape> inputs) {
  if (static_cast<int>(inputs.size()) != arity(layer)) {
    throw ShapeError(std::string(op_name(layer)) + " expects " +
                     std::to_string(arity(layer)) + " input(s), got " +
                     std::to_string(inputs.size()));
  }
  const Shape& in = inputs[0];
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    if (in[1] != conv->c_in) {
      throw ShapeError(axis_mismatch("conv", "channel", in[1], conv->c_in));
    }
    return {in[0], conv->c_out,
            conv_out_size(in[2], conv->kernel, conv->stride, conv->padding),
            conv_out_size(in[3], conv->kernel, conv->stride, conv->padding)};
  }
  if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
    if (in[1] != bn->channels()) {
      throw ShapeError(axis_mismatch("bn", "channel", in[1], bn->channels()));
    }
    return in;
  }
  if (const auto* pool = std::get_if<AvgPoolLayer>(&layer)) {
    return {in[0], in[1], conv_out_size(in[2], pool->kernel, pool->stride, 0),
            conv_out_size(in[3], pool->kernel, pool->stride, 0)};
  }
  if (const auto* fc = std::get_if<LinearLayer>(&layer)) {
    if (in[2] != 1) throw ShapeError(axis_mismatch("linear", "height", in[2], 1));
    if (in[3] != 1) throw ShapeError(axis_mismatch("linear", "width", in[3], 1));
    if (in[1] != fc->in) {
      throw ShapeError(axis_mismatch("linear", "channel", in[1], fc->in));
    }
    return {in[0], fc->out, 1, 1};
  }
  if (std::holds_alternative<AddLayer>(layer)) {
    static const char* kAxis[] = {"batch", "channel", "height", "width"};
    for (int i = 0; i < 4; ++i) {
      if (inputs[0][i] != inputs[1][i]) {
        throw ShapeError(axis_mismatch("add", kAxis[i], inputs[1][i],
                                       inputs[0][i]));
      }
    }
    return in;
  }
  if (std::holds_alternative<FlattenLayer>(layer)) {
    return {in[0], in[1] * in[2] * in[3], 1, 1};
  }
  return in;  // activation
}

Tensor conv2d(const ConvLayer& conv, const Tensor& x) {
  conv.check();
  const Shape out_shape = output_shape(Layer{conv}, std::span(&x.shape(), 1));
  Tensor y(out_shape);
  const int cin_g = conv.c_in / conv.groups;
  const int cout_g = conv.c_out / conv.groups;
  const int k = conv.kernel, s = conv.stride, p = conv.padding;
  const int H = x.h(), W = x.w(), OH = out_shape[2], OW = out_shape[3];
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < conv.c_out; ++o) {
      const int g = o / cout_g;
      double* out = &y.at(n, o, 0, 0);
      const double b = conv.has_bias() ? conv.bias[o] : 0.0;
      for (int i = 0; i < OH * OW; ++i) out[i] = b;
      for (int ci = 0; ci < cin_g; ++ci) {
        const int c = g * cin_g + ci;
        const double* in = &x.data()[x.offset(n, c, 0, 0)];
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const double wv = conv.w(o, ci, kh, kw);
            if (wv == 0.0) continue;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * s + kh - p;
              if (ih < 0 || ih >= H) continue;
              const double* row = in + static_cast<std::size_t>(ih) * W;
              double* orow = out + static_cast<std::size_t>(oh) * OW;
              for (int ow = 0; ow < OW; ++ow) {
                const int iw = ow * s + kw - p;
                if (iw < 0 || iw >= W) continue;
                orow[ow] += wv * row[iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor batch_norm(const BatchNormLayer& bn, const Tensor& x) {
  bn.check();
  output_shape(Layer{bn}, std::span(&x.shape(), 1));
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double a = bn.scale(c);
      const double mu = bn.running_mean[c];
      const double beta = bn.beta[c];
      const std::size_t base = x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        y.data()[base + i] = (x.data()[base + i] - mu) * a + beta;
      }
    }
  }
  return y;
}

Tensor activation(ActivationKind kind, const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = activate(kind, v);
  return y;
}

Tensor avg_pool(const AvgPoolLayer& pool, const Tensor& x) {
  const Shape out_shape = output_shape(Layer{pool}, std::span(&x.shape(), 1));
  Tensor y(out_shape);
  const int k = pool.kernel, s = pool.stride;
  const double inv = 1.0 / (static_cast<double>(k) * k);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oh = 0; oh < out_shape[2]; ++oh) {
        for (int ow = 0; ow < out_shape[3]; ++ow) {
          double acc = 0.0;
          for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
              acc += x.at(n, c, oh * s + kh, ow * s + kw);
            }
          }
          y.at(n, c, oh, ow) = acc * inv;
        }
      }
    }
  }
  return y;
}

Tensor linear(const LinearLayer& fc, const Tensor& x) {
  fc.check();
  const Shape out_shape = output_shape(Layer{fc}, std::span(&x.shape(), 1));
  Tensor y(out_shape);
  for (int n = 0; n < x.n(); ++n) {
    const double* in = &x.data()[x.offset(n, 0, 0, 0)];
    for (int o = 0; o < fc.out; ++o) {
      double acc = fc.has_bias() ? fc.bias[o] : 0.0;
      const double* row = &fc.weights[static_cast<std::size_t>(o) * fc.in];
      for (int i = 0; i < fc.in; ++i) acc += row[i] * in[i];
      y.at(n, o, 0, 0) = acc;
    }
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape shapes[] = {a.shape(), b.shape()};
  output_shape(Layer{AddLayer{}}, shapes);
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += b.data()[i];
  return y;
}

Tensor flatten(const Tensor& x) {
  std::vector<double> data(x.data().begin(), x.data().end());
  return Tensor({x.n(), x.c() * x.h() * x.w(), 1, 1}, std::move(data));
}

Tensor execute_layer(const Layer& layer, std::span<const Tensor* const> inputs,
                     const ExecOptions& options) {
  if (static_cast<int>(inputs.size()) != arity(layer)) {
    throw ShapeError(std::string(op_name(layer)) + " expects " +
                     std::to_string(arity(layer)) + " input(s), got " +
                     std::to_string(inputs.size()));
  }
  if (options.checked) {
    for (const Tensor* t : inputs) {
      if (!t->all_finite()) {
        throw NumericError(std::string("non-finite input to ") +
                           op_name(layer));
      }
    }
  }
  const Tensor& x = *inputs[0];
  Tensor y;
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    y = conv2d(*conv, x);
  } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
    y = batch_norm(*bn, x);
  } else if (const auto* act = std::get_if<ActivationLayer>(&layer)) {
    y = activation(act->kind, x);
  } else if (const auto* pool = std::get_if<AvgPoolLayer>(&layer)) {
    y = avg_pool(*pool, x);
  } else if (const auto* fc = std::get_if<LinearLayer>(&layer)) {
    y = linear(*fc, x);
  } else if (std::holds_alternative<AddLayer>(layer)) {
    y = add(x, *inputs[1]);
  } else {
    y = flatten(x);
  }
  if (options.precision == Precision::kF32) return y.with_precision(options.precision);
  return y;
}

Tensor execute_layer(const Layer& layer, const Tensor& x,
                     const ExecOptions& options) {
  const Tensor* inputs[] = {&x};
  return execute_layer(layer, inputs, options);
}

Tensor execute_layer(const Layer& layer, const Tensor& a, const Tensor& b,
                     const ExecOptions& options) {
  const Tensor* inputs[] = {&a, &b};
  return execute_layer(layer, inputs, options);
}

}  // namespace blockfuse
