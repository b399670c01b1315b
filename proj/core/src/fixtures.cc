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

#include "blockfuse/fixtures.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "blockfuse/cost.h"
#include "blockfuse/errors.h"
#include "blockfuse/kernels.h"
#include "blockfuse/rng.h"

namespace blockfuse {
namespace {

int make_divisible(double v, int divisor = 8) {
  int rounded = std::max(
      divisor, static_cast<int>(v + divisor / 2.0) / divisor * divisor);
  if (rounded < 0.9 * v) rounded += divisor;
  return rounded;
}

// Appends nodes in chain order, tracking the current tensor id and dims.
class Builder {
 public:
  explicit Builder(Shape input) : dims_(input) {
    graph_.input_dims = input;
  }

  std::string conv(const std::string& id, int c_out, int kernel, int stride,
                   int padding, int groups = 1) {
    ConvLayer c = ConvLayer::make(dims_[1], c_out, kernel, stride, padding,
                                  groups, false);
    return push(id, c);
  }
  std::string bn(const std::string& id) {
    return push(id, BatchNormLayer::identity(dims_[1]));
  }
  std::string act(const std::string& id, ActivationKind kind) {
    return push(id, ActivationLayer{kind});
  }
  std::string pool(const std::string& id, int kernel, int stride) {
    return push(id, AvgPoolLayer{kernel, stride});
  }
  std::string flatten(const std::string& id) { return push(id, FlattenLayer{}); }
  std::string linear(const std::string& id, int out) {
    return push(id, LinearLayer::make(dims_[1], out, true));
  }
  std::string add(const std::string& id, const std::string& skip) {
    graph_.nodes.push_back(Node{id, AddLayer{}, {skip, current_}});
    current_ = id;
    return id;
  }

  // PW-BN-Act-DW-BN-Act-PW-BN (+Add) as one annotated block.
  void inverted_residual(const std::string& prefix, int c_out, int hidden,
                         double expand_ratio, int kernel, int stride,
                         ActivationKind kind) {
    const std::string entry = current_;
    const int c_in = dims_[1];
    const bool residual = stride == 1 && c_in == c_out;
    BlockAnnotation block;
    block.kind = BlockKind::kInvertedResidual;
    block.expand_ratio = expand_ratio;
    block.dw_kernel = kernel;
    block.stride = stride;
    block.has_residual = residual;
    block.node_ids = {conv(prefix + ".pw1", hidden, 1, 1, 0),
                      bn(prefix + ".bn1"),
                      act(prefix + ".act1", kind),
                      conv(prefix + ".dw", hidden, kernel, stride, kernel / 2,
                           hidden),
                      bn(prefix + ".bn2"),
                      act(prefix + ".act2", kind),
                      conv(prefix + ".pw2", c_out, 1, 1, 0),
                      bn(prefix + ".bn3")};
    block.act_node_ids = {prefix + ".act1", prefix + ".act2"};
    if (residual) block.node_ids.push_back(add(prefix + ".add", entry));
    block.block_id = static_cast<int>(graph_.blocks.size());
    graph_.blocks.push_back(std::move(block));
  }

  const Shape& dims() const { return dims_; }

  NetGraph finish() {
    validate_graph(graph_);
    return std::move(graph_);
  }

 private:
  std::string push(const std::string& id, Layer layer) {
    dims_ = execute_shape(layer);
    graph_.nodes.push_back(Node{id, std::move(layer), {current_}});
    current_ = id;
    return id;
  }

  Shape execute_shape(const Layer& layer) const {
    const Shape in[1] = {dims_};
    return output_shape(layer, in);
  }

  NetGraph graph_;
  Shape dims_;
  std::string current_ = kGraphInput;
};

void head(Builder& b, int c_last, int classes, ActivationKind kind) {
  if (c_last > 0) {
    b.conv("head.conv", c_last, 1, 1, 0);
    b.bn("head.bn");
    b.act("head.act", kind);
  }
  b.pool("pool", b.dims()[2], 1);
  b.flatten("flatten");
  b.linear("fc", classes);
}

void check_resolution(int resolution, int minimum) {
  if (resolution < minimum)
    throw ShapeError("resolution " + std::to_string(resolution) +
                     " is below the minimum of " + std::to_string(minimum));
}

std::vector<double> normal_vector(Rng& rng, std::size_t n, double sd) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, sd);
  return v;
}

}  // namespace

NetGraph make_mobilenet_v2(double width, int resolution, int num_classes) {
  if (!(width > 0.0)) throw ShapeError("width multiplier must be positive");
  check_resolution(resolution, 1);
  if (num_classes < 1) throw ShapeError("num_classes must be positive");
  struct Stage { int t, c, n, s; };
  static constexpr Stage kStages[] = {{1, 16, 1, 1},  {6, 24, 2, 2},
                                      {6, 32, 3, 2},  {6, 64, 4, 2},
                                      {6, 96, 3, 1},  {6, 160, 3, 2},
                                      {6, 320, 1, 1}};
  Builder b({1, 3, resolution, resolution});
  b.conv("stem.conv", make_divisible(32 * width), 3, 2, 1);
  b.bn("stem.bn");
  b.act("stem.act", ActivationKind::kReLU6);
  int index = 0;
  for (const Stage& st : kStages) {
    const int c_out = make_divisible(st.c * width);
    for (int i = 0; i < st.n; ++i) {
      const int hidden = static_cast<int>(std::lround(b.dims()[1] * st.t));
      b.inverted_residual("b" + std::to_string(index++), c_out, hidden, st.t,
                          3, i == 0 ? st.s : 1, ActivationKind::kReLU6);
    }
  }
  const int last = width > 1.0 ? make_divisible(1280 * width) : 1280;
  head(b, last, num_classes, ActivationKind::kReLU6);
  return b.finish();
}

NetGraph make_toy_irb(int blocks, int resolution, int num_classes) {
  if (blocks < 1) throw ShapeError("toy network needs at least one block");
  check_resolution(resolution, 4);
  Builder b({1, 3, resolution, resolution});
  b.conv("stem.conv", 8, 3, 1, 1);
  b.bn("stem.bn");
  b.act("stem.act", ActivationKind::kReLU6);
  for (int i = 0; i < blocks; ++i) {
    const bool down = i == 1;
    const int c_out = down ? 12 : b.dims()[1];
    b.inverted_residual("b" + std::to_string(i), c_out, b.dims()[1] * 2, 2, 3,
                        down ? 2 : 1, ActivationKind::kReLU6);
  }
  head(b, 0, num_classes, ActivationKind::kReLU6);
  return b.finish();
}

NetGraph make_vgg_toy(int resolution, int num_classes) {
  check_resolution(resolution, 4);
  Builder b({1, 3, resolution, resolution});
  const int widths[] = {8, 8, 16, 16, 16};
  for (int i = 0; i < 5; ++i) {
    const std::string p = "conv" + std::to_string(i);
    b.conv(p, widths[i], 3, 1, 1);
    b.bn(p + ".bn");
    b.act(p + ".act", ActivationKind::kReLU);
    if (i == 1 || i == 3) b.pool("pool" + std::to_string(i), 2, 2);
  }
  head(b, 0, num_classes, ActivationKind::kReLU);
  return b.finish();
}

NetGraph randomize_weights(const NetGraph& graph, std::uint64_t seed,
                           const InitOptions& options) {
  NetGraph g = graph;
  Rng rng(seed);
  std::vector<std::string> last_bns;
  for (const BlockAnnotation& block : g.blocks)
    for (auto it = block.node_ids.rbegin(); it != block.node_ids.rend(); ++it)
      if (std::holds_alternative<BatchNormLayer>(g.node(*it).layer)) {
        last_bns.push_back(*it);
        break;
      }
  for (Node& node : g.nodes) {
    if (auto* c = std::get_if<ConvLayer>(&node.layer)) {
      const double sd = 1.0 / std::sqrt(double(c->c_in / c->groups) *
                                        c->kernel * c->kernel);
      for (double& w : c->weights.data()) w = rng.normal(0.0, sd);
      if (options.zero_bias)
        c->bias.clear();
      else
        c->bias = normal_vector(rng, c->c_out, 0.1);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&node.layer)) {
      const bool last = std::find(last_bns.begin(), last_bns.end(), node.id) !=
                        last_bns.end();
      for (double& v : bn->gamma)
        v = last ? rng.uniform(0.25, 0.75) : rng.uniform(0.5, 1.5);
      for (double& v : bn->running_var) v = rng.uniform(0.5, 2.0);
      if (options.zero_bias) {
        std::fill(bn->beta.begin(), bn->beta.end(), 0.0);
        std::fill(bn->running_mean.begin(), bn->running_mean.end(), 0.0);
      } else {
        bn->beta = normal_vector(rng, bn->beta.size(), 0.1);
        bn->running_mean = normal_vector(rng, bn->running_mean.size(), 0.1);
      }
    } else if (auto* fc = std::get_if<LinearLayer>(&node.layer)) {
      fc->weights = normal_vector(rng, fc->weights.size(),
                                  1.0 / std::sqrt(double(fc->in)));
      fc->bias = options.zero_bias ? std::vector<double>(fc->out, 0.0)
                                   : normal_vector(rng, fc->out, 0.1);
    }
  }
  return g;
}

const std::vector<std::pair<std::string, std::vector<int>>>& mbv2_14_masks() {
  static const std::vector<std::pair<std::string, std::vector<int>>> kMasks = {
      {"ds-a", {1, 0, 0, 1, 1, 0, 1, 0, 1, 0, 1, 1, 0, 1, 1, 1, 1}},
      {"ds-b", {0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1}},
      {"ds-c", {1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1}},
      {"ds-d", {0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1}},
      {"ds-e", {1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1}},
      {"ds-f", {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}},
  };
  return kMasks;
}

const std::vector<std::pair<std::string, std::vector<int>>>& mbv2_masks() {
  static const std::vector<std::pair<std::string, std::vector<int>>> kMasks = {
      {"ds-a", {0, 0, 1, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1}},
      {"ds-b", {1, 0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1}},
      {"ds-c", {1, 0, 0, 1, 1, 0, 1, 0, 0, 0, 1, 0, 0, 1, 1, 1, 1}},
      {"ds-d", {1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 1}},
  };
  return kMasks;
}

NetGraph make_fixture(const std::string& name, int resolution) {
  if (name == "mbv2") {
    NetGraph g = make_mobilenet_v2(1.0, resolution > 0 ? resolution : 224);
    g.metadata["fixture"] = name;
    return g;
  }
  if (name == "mbv2-1.4") {
    NetGraph g = make_mobilenet_v2(1.4, resolution > 0 ? resolution : 224);
    g.metadata["fixture"] = name;
    return g;
  }
  if (name == "vgg-toy") {
    NetGraph g = make_vgg_toy(resolution > 0 ? resolution : 16);
    g.metadata["fixture"] = name;
    return g;
  }
  const std::string prefix = "toy-irb-";
  if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size()) {
    const std::string digits = name.substr(prefix.size());
    if (digits.size() <= 3 &&
        std::all_of(digits.begin(), digits.end(),
                    [](char ch) { return ch >= '0' && ch <= '9'; })) {
      NetGraph g = make_toy_irb(std::stoi(digits), resolution > 0 ? resolution : 8);
      g.metadata["fixture"] = name;
      return g;
    }
  }
  throw Error("unknown fixture '" + name +
              "' (expected mbv2, mbv2-1.4, toy-irb-<N> or vgg-toy)");
}

LatencyTable flops_latency_table(const NetGraph& graph) {
  const CostReport report = flops_of_graph(graph);
  LatencyTable table;
  for (const BlockCost& b : report.blocks)
    table.entries.emplace_back(b.block_id,
                               std::max(1e-3, double(b.flops) / 1e6));
  return table;
}

}  // namespace blockfuse
