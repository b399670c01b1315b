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

#include "blockfuse/autodiff.h"

#include <algorithm>
#include <cmath>

#include "blockfuse/errors.h"
#include "blockfuse/kernels.h"

namespace blockfuse {

struct TapeAccess {
  static std::vector<std::string>& ids(GradTape& t) { return t.node_ids_; }
  static const std::vector<std::string>& ids(const GradTape& t) {
    return t.node_ids_;
  }
  static Tensor& input(GradTape& t) { return t.input_; }
  static std::map<std::string, Tensor>& values(GradTape& t) { return t.values_; }
  static std::vector<int>& m_hat(GradTape& t) { return t.m_hat_; }
  static std::map<std::string, int>& gates(GradTape& t) { return t.gate_block_; }
  static const std::map<std::string, int>& gates(const GradTape& t) {
    return t.gate_block_;
  }
};

const Tensor& GradTape::value(const std::string& node_id) const {
  if (node_id == kGraphInput) return input_;
  auto it = values_.find(node_id);
  if (it == values_.end())
    throw TrainError("tape has no value for node '" + node_id + "'");
  return it->second;
}

std::vector<ParamView> trainable_parameters(NetGraph& graph) {
  std::vector<ParamView> out;
  for (Node& node : graph.nodes) {
    if (auto* c = std::get_if<ConvLayer>(&node.layer)) {
      out.push_back({node.id + ".weight", c->weights.data()});
      if (c->has_bias()) out.push_back({node.id + ".bias", c->bias});
    } else if (auto* bn = std::get_if<BatchNormLayer>(&node.layer)) {
      out.push_back({node.id + ".gamma", bn->gamma});
      out.push_back({node.id + ".beta", bn->beta});
    } else if (auto* fc = std::get_if<LinearLayer>(&node.layer)) {
      out.push_back({node.id + ".weight", fc->weights});
      if (fc->has_bias()) out.push_back({node.id + ".bias", fc->bias});
    }
  }
  return out;
}

namespace {

std::map<std::string, int> gate_map(const NetGraph& graph) {
  std::map<std::string, int> gates;
  for (std::size_t b = 0; b < graph.blocks.size(); ++b)
    for (const std::string& id : graph.blocks[b].act_node_ids)
      gates[id] = static_cast<int>(b);
  return gates;
}

void conv_backward(const ConvLayer& conv, const Tensor& x, const Tensor& gy,
                   Tensor& gx, std::vector<double>& gw,
                   std::vector<double>* gb) {
  const int cin_g = conv.c_in / conv.groups;
  const int cout_g = conv.c_out / conv.groups;
  const int k = conv.kernel, s = conv.stride, p = conv.padding;
  const int H = x.h(), W = x.w(), OH = gy.h(), OW = gy.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < conv.c_out; ++o) {
      const int g = o / cout_g;
      const double* go = &gy.data()[gy.offset(n, o, 0, 0)];
      if (gb) {
        double sum = 0.0;
        for (int i = 0; i < OH * OW; ++i) sum += go[i];
        (*gb)[o] += sum;
      }
      for (int ci = 0; ci < cin_g; ++ci) {
        const int c = g * cin_g + ci;
        const double* in = &x.data()[x.offset(n, c, 0, 0)];
        double* gin = &gx.data()[gx.offset(n, c, 0, 0)];
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const std::size_t wi =
                ((static_cast<std::size_t>(o) * cin_g + ci) * k + kh) * k + kw;
            const double wv = conv.weights.data()[wi];
            double acc = 0.0;
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * s + kh - p;
              if (ih < 0 || ih >= H) continue;
              for (int ow = 0; ow < OW; ++ow) {
                const int iw = ow * s + kw - p;
                if (iw < 0 || iw >= W) continue;
                const double g = go[oh * OW + ow];
                acc += g * in[ih * W + iw];
                gin[ih * W + iw] += wv * g;
              }
            }
            gw[wi] += acc;
          }
        }
      }
    }
  }
}

void accumulate(std::map<std::string, Tensor>& grads, const std::string& id,
                const Tensor& g) {
  auto it = grads.find(id);
  if (it == grads.end()) {
    grads.emplace(id, g);
    return;
  }
  auto dst = it->second.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::vector<double>& param_grad(Gradients& out, const std::string& name,
                                std::size_t size) {
  auto& v = out.params[name];
  if (v.empty()) v.assign(size, 0.0);
  return v;
}

}  // namespace

ForwardResult forward_masked(const NetGraph& graph, std::span<const int> m_hat,
                             const Tensor& x) {
  validate_graph(graph);
  if (!m_hat.empty() && m_hat.size() != graph.blocks.size())
    throw ValidationError("mask has " + std::to_string(m_hat.size()) +
                          " entries but the graph has " +
                          std::to_string(graph.blocks.size()) + " blocks");
  for (int v : m_hat)
    if (v != 0 && v != 1) throw ValidationError("mask entries must be 0 or 1");
  if (x.c() != graph.input_dims[1] || x.h() != graph.input_dims[2] ||
      x.w() != graph.input_dims[3])
    throw ShapeError("input dims " + to_string(x.shape()) +
                     " do not match graph input " + to_string(graph.input_dims));

  ForwardResult result;
  GradTape& tape = result.tape;
  for (const Node& node : graph.nodes) TapeAccess::ids(tape).push_back(node.id);
  TapeAccess::input(tape) = x;
  TapeAccess::m_hat(tape).assign(m_hat.begin(), m_hat.end());
  if (!m_hat.empty()) TapeAccess::gates(tape) = gate_map(graph);
  auto& values = TapeAccess::values(tape);
  const auto& gates = TapeAccess::gates(tape);

  for (int index : topological_order(graph)) {
    const Node& node = graph.nodes[index];
    std::vector<const Tensor*> inputs;
    for (const std::string& in : node.inputs) inputs.push_back(&tape.value(in));
    Tensor y;
    const auto* act = std::get_if<ActivationLayer>(&node.layer);
    auto gate = gates.find(node.id);
    if (act && gate != gates.end()) {
      y = m_hat[gate->second] == 1 ? activation(act->kind, *inputs[0])
                                   : *inputs[0];
    } else {
      y = execute_layer(node.layer, inputs);
    }
    values.emplace(node.id, std::move(y));
  }
  result.logits = tape.value(sink_id(graph));
  return result;
}

Gradients backward(const NetGraph& graph, const GradTape& tape,
                   const Tensor& loss_grad) {
  const auto& ids = TapeAccess::ids(tape);
  bool same = ids.size() == graph.nodes.size();
  for (std::size_t i = 0; same && i < ids.size(); ++i)
    same = ids[i] == graph.nodes[i].id;
  if (!same) throw TrainError("tape was recorded on a different graph");
  const std::string sink = sink_id(graph);
  if (loss_grad.shape() != tape.value(sink).shape())
    throw TrainError("loss gradient dims " + to_string(loss_grad.shape()) +
                     " do not match logits " +
                     to_string(tape.value(sink).shape()));

  Gradients out;
  out.m_hat.assign(tape.m_hat().size(), 0.0);
  std::map<std::string, Tensor> grads;
  grads.emplace(sink, loss_grad);
  const auto& gates = TapeAccess::gates(tape);

  std::vector<int> order = topological_order(graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node& node = graph.nodes[*it];
    auto found = grads.find(node.id);
    if (found == grads.end()) continue;
    const Tensor gy = std::move(found->second);
    grads.erase(found);
    const Tensor& x = tape.value(node.inputs[0]);
    Tensor gx(x.shape());

    if (const auto* conv = std::get_if<ConvLayer>(&node.layer)) {
      auto& gw = param_grad(out, node.id + ".weight", conv->weights.size());
      std::vector<double>* gb =
          conv->has_bias() ? &param_grad(out, node.id + ".bias", conv->c_out)
                           : nullptr;
      conv_backward(*conv, x, gy, gx, gw, gb);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&node.layer)) {
      auto& gg = param_grad(out, node.id + ".gamma", bn->gamma.size());
      auto& gbeta = param_grad(out, node.id + ".beta", bn->beta.size());
      const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
      for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
          const double inv = 1.0 / std::sqrt(bn->running_var[c] + bn->epsilon);
          const double a = bn->gamma[c] * inv;
          const double mu = bn->running_mean[c];
          const std::size_t base = x.offset(n, c, 0, 0);
          double sg = 0.0, sb = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const double g = gy.data()[base + i];
            gx.data()[base + i] = g * a;
            sg += g * (x.data()[base + i] - mu) * inv;
            sb += g;
          }
          gg[c] += sg;
          gbeta[c] += sb;
        }
    } else if (const auto* act = std::get_if<ActivationLayer>(&node.layer)) {
      auto gate = gates.find(node.id);
      if (gate != gates.end()) {
        const double m = tape.m_hat()[gate->second];
        double gm = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double z = x.data()[i];
          const double g = gy.data()[i];
          gm += g * (activate(act->kind, z) - z);
          gx.data()[i] = g * (m * activate_grad(act->kind, z) + (1.0 - m));
        }
        out.m_hat[gate->second] += gm;
      } else {
        for (std::size_t i = 0; i < x.size(); ++i)
          gx.data()[i] = gy.data()[i] * activate_grad(act->kind, x.data()[i]);
      }
    } else if (const auto* pool = std::get_if<AvgPoolLayer>(&node.layer)) {
      const int k = pool->kernel, s = pool->stride;
      const double inv = 1.0 / (double(k) * k);
      for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
          for (int oh = 0; oh < gy.h(); ++oh)
            for (int ow = 0; ow < gy.w(); ++ow) {
              const double g = gy.at(n, c, oh, ow) * inv;
              for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw)
                  gx.at(n, c, oh * s + kh, ow * s + kw) += g;
            }
    } else if (const auto* fc = std::get_if<LinearLayer>(&node.layer)) {
      auto& gw = param_grad(out, node.id + ".weight", fc->weights.size());
      std::vector<double>* gb =
          fc->has_bias() ? &param_grad(out, node.id + ".bias", fc->out)
                         : nullptr;
      for (int n = 0; n < x.n(); ++n) {
        const double* in = &x.data()[x.offset(n, 0, 0, 0)];
        double* gin = &gx.data()[gx.offset(n, 0, 0, 0)];
        for (int o = 0; o < fc->out; ++o) {
          const double g = gy.data()[gy.offset(n, o, 0, 0)];
          if (gb) (*gb)[o] += g;
          const double* w = &fc->weights[static_cast<std::size_t>(o) * fc->in];
          double* gwr = &gw[static_cast<std::size_t>(o) * fc->in];
          for (int i = 0; i < fc->in; ++i) {
            gwr[i] += g * in[i];
            gin[i] += g * w[i];
          }
        }
      }
    } else if (std::holds_alternative<AddLayer>(node.layer)) {
      accumulate(grads, node.inputs[1], gy);
      gx = gy;
    } else {  // flatten keeps memory order
      std::copy(gy.data().begin(), gy.data().end(), gx.data().begin());
    }
    accumulate(grads, node.inputs[0], gx);
  }
  auto in = grads.find(kGraphInput);
  out.input = in != grads.end() ? in->second : Tensor(tape.input().shape());
  out.m = out.m_hat;
  return out;
}

namespace {

// log softmax(z / t)
std::vector<double> log_softmax_row(const double* z, int classes, double t) {
  std::vector<double> lp(classes);
  double mx = z[0] / t;
  for (int c = 1; c < classes; ++c) mx = std::max(mx, z[c] / t);
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) sum += std::exp(z[c] / t - mx);
  const double lse = mx + std::log(sum);
  for (int c = 0; c < classes; ++c) lp[c] = z[c] / t - lse;
  return lp;
}

}  // namespace

LossResult classification_loss(const Tensor& logits,
                               const std::vector<int>& labels,
                               double label_smoothing, const Tensor* teacher,
                               double alpha, double temperature) {
  const int batch = logits.n();
  const int classes = static_cast<int>(logits.size() / std::max(batch, 1));
  if (batch < 1 || static_cast<int>(labels.size()) != batch)
    throw TrainError("label count does not match batch size");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw TrainError("label_smoothing must be in [0, 1)");
  const bool kd = teacher != nullptr && alpha > 0.0;
  if (kd && teacher->shape() != logits.shape())
    throw TrainError("teacher logits " + to_string(teacher->shape()) +
                     " do not match student logits " +
                     to_string(logits.shape()));
  if (kd && !(temperature > 0.0))
    throw TrainError("distill temperature must be positive");

  LossResult r;
  r.grad = Tensor(logits.shape());
  for (int n = 0; n < batch; ++n) {
    const double* z = &logits.data()[static_cast<std::size_t>(n) * classes];
    double* g = &r.grad.data()[static_cast<std::size_t>(n) * classes];
    const int y = labels[n];
    if (y < 0 || y >= classes)
      throw TrainError("label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    const std::vector<double> lp = log_softmax_row(z, classes, 1.0);
    int best = 0;
    for (int c = 0; c < classes; ++c) {
      const double q = (c == y ? 1.0 - label_smoothing : 0.0) +
                       label_smoothing / classes;
      if (q > 0.0) r.cross_entropy -= q * lp[c];
      g[c] = (std::exp(lp[c]) - q) / batch;
      if (z[c] > z[best]) best = c;
    }
    if (best == y) ++r.correct;
    if (kd) {
      const double* zt = &teacher->data()[static_cast<std::size_t>(n) * classes];
      const std::vector<double> ls = log_softmax_row(z, classes, temperature);
      const std::vector<double> lt = log_softmax_row(zt, classes, temperature);
      double kl = 0.0;
      for (int c = 0; c < classes; ++c) {
        const double pt = std::exp(lt[c]);
        kl += pt * (lt[c] - ls[c]);
        g[c] += alpha * temperature * (std::exp(ls[c]) - pt) / batch;
      }
      r.distill += alpha * temperature * temperature * kl;
    }
  }
  r.cross_entropy /= batch;
  r.distill /= batch;
  r.loss = r.cross_entropy + r.distill;
  return r;
}

}  // namespace blockfuse
