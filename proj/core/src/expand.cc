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

#include "blockfuse/expand.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "blockfuse/errors.h"
#include "blockfuse/rng.h"

namespace blockfuse {

std::vector<int> ExpandResult::collapse_mask() const {
  std::vector<int> mask(added.size());
  for (std::size_t i = 0; i < added.size(); ++i) mask[i] = added[i] ? 0 : 1;
  return mask;
}

namespace {

ConvLayer random_conv(Rng& rng, int c_in, int c_out, int kernel, int stride,
                      int padding, int groups) {
  ConvLayer c = ConvLayer::make(c_in, c_out, kernel, stride, padding, groups);
  const double sd = 1.0 / std::sqrt(double(c_in / groups) * kernel * kernel);
  for (double& w : c.weights.data()) w = rng.normal(0.0, sd);
  return c;
}

// PW-BN-Act-DW-BN-Act-PW-BN replacing one conv-shaped step c_in -> c_out.
struct Expansion {
  std::vector<Node> nodes;
  BlockAnnotation block;
};

Expansion make_expansion(const std::string& prefix, const std::string& input,
                         int c_in, int c_out, int kernel, int stride,
                         int padding, const ExpandOptions& opt, Rng& rng) {
  const int hidden = static_cast<int>(std::lround(c_in * opt.expand_ratio));
  Expansion e;
  auto push = [&](const std::string& suffix, Layer layer) {
    const std::string id = prefix + suffix;
    const std::string in = e.nodes.empty() ? input : e.nodes.back().id;
    e.nodes.push_back(Node{id, std::move(layer), {in}});
    e.block.node_ids.push_back(id);
  };
  push(".pw1", random_conv(rng, c_in, hidden, 1, 1, 0, 1));
  push(".bn1", BatchNormLayer::identity(hidden));
  push(".act1", ActivationLayer{opt.activation});
  push(".dw", random_conv(rng, hidden, hidden, kernel, stride, padding, hidden));
  push(".bn2", BatchNormLayer::identity(hidden));
  push(".act2", ActivationLayer{opt.activation});
  push(".pw2", random_conv(rng, hidden, c_out, 1, 1, 0, 1));
  push(".bn3", BatchNormLayer::identity(c_out));
  e.block.kind = BlockKind::kInvertedResidual;
  e.block.expand_ratio = opt.expand_ratio;
  e.block.dw_kernel = kernel;
  e.block.stride = stride;
  e.block.has_residual = false;
  e.block.act_node_ids = {prefix + ".act1", prefix + ".act2"};
  return e;
}

std::string fresh_prefix(const NetGraph& graph, const std::string& base) {
  std::string prefix = base + ".x";
  for (int k = 1; graph.find(prefix + ".pw1") != nullptr; ++k)
    prefix = base + ".x" + std::to_string(k);
  return prefix;
}

}  // namespace

ExpandResult expand_for_training(const NetGraph& graph,
                                 const ExpandOptions& options) {
  validate_graph(graph);
  if (!(options.expand_ratio > 0.0))
    throw TrainError("expand_ratio must be positive");
  Rng rng(options.seed);

  std::set<std::string> in_block;
  for (const BlockAnnotation& b : graph.blocks)
    in_block.insert(b.node_ids.begin(), b.node_ids.end());
  const std::vector<int> topo = topological_order(graph);

  // Plain convs in execution order.
  std::vector<std::string> plain;
  for (int i : topo) {
    const Node& n = graph.nodes[i];
    if (std::holds_alternative<ConvLayer>(n.layer) && !in_block.count(n.id))
      plain.push_back(n.id);
  }
  // Top-level inverted residual blocks whose first node is a 1x1 conv.
  std::vector<std::size_t> irbs;
  for (std::size_t b = 0; b < graph.blocks.size(); ++b) {
    const BlockAnnotation& blk = graph.blocks[b];
    if (blk.kind != BlockKind::kInvertedResidual) continue;
    bool nested = false;
    for (const BlockAnnotation& o : graph.blocks)
      nested = nested || (o.node_ids.size() > blk.node_ids.size() &&
                          std::find(o.node_ids.begin(), o.node_ids.end(),
                                    blk.node_ids.front()) != o.node_ids.end());
    const auto* pw = std::get_if<ConvLayer>(&graph.node(blk.node_ids.front()).layer);
    if (!nested && pw && pw->kernel == 1 && pw->groups == 1) irbs.push_back(b);
  }
  if (irbs.empty() && plain.size() < 4)
    throw TrainError("graph has " + std::to_string(plain.size()) +
                     " plain convs and no inverted residual blocks; the "
                     "expansion rule skips the first two and the last conv, "
                     "so nothing is left to expand");

  // Node id -> expansion replacing it.
  std::map<std::string, Expansion> expansions;
  for (std::size_t i = 2; i + 1 < plain.size(); ++i) {
    const Node& n = graph.node(plain[i]);
    const auto& c = std::get<ConvLayer>(n.layer);
    if (c.kernel != 3 || c.groups != 1) continue;
    expansions.emplace(n.id, make_expansion(fresh_prefix(graph, n.id),
                                            n.inputs[0], c.c_in, c.c_out, 3,
                                            c.stride, c.padding, options, rng));
  }
  std::map<std::size_t, std::string> nested_pw;  // outer block -> its PW1
  for (std::size_t j = 0; j < irbs.size(); j += 2) {
    const BlockAnnotation& blk = graph.blocks[irbs[j]];
    const Node& n = graph.node(blk.node_ids.front());
    const auto& c = std::get<ConvLayer>(n.layer);
    Expansion e = make_expansion(fresh_prefix(graph, n.id), n.inputs[0],
                                 c.c_in, c.c_out, 1, 1, 0, options, rng);
    nested_pw[irbs[j]] = n.id;
    expansions.emplace(n.id, std::move(e));
  }

  ExpandResult result;
  NetGraph& out = result.graph;
  out.input_dims = graph.input_dims;
  out.metadata = graph.metadata;
  std::map<std::string, std::string> rename;  // replaced id -> expansion tail
  for (const auto& [id, e] : expansions) rename[id] = e.nodes.back().id;
  for (const Node& n : graph.nodes) {
    auto it = expansions.find(n.id);
    if (it == expansions.end()) {
      Node copy = n;
      for (std::string& in : copy.inputs)
        if (auto r = rename.find(in); r != rename.end()) in = r->second;
      out.nodes.push_back(std::move(copy));
    } else {
      for (const Node& added : it->second.nodes) out.nodes.push_back(added);
    }
  }

  std::vector<std::pair<BlockAnnotation, int>> blocks;
  for (std::size_t b = 0; b < graph.blocks.size(); ++b) {
    BlockAnnotation blk = graph.blocks[b];
    if (auto it = nested_pw.find(b); it != nested_pw.end()) {
      const auto& ids = expansions.at(it->second).block.node_ids;
      std::vector<std::string> merged(ids);
      merged.insert(merged.end(), blk.node_ids.begin() + 1, blk.node_ids.end());
      blk.node_ids = std::move(merged);
    }
    blocks.emplace_back(std::move(blk), 0);
  }
  for (const auto& [id, e] : expansions) blocks.emplace_back(e.block, 1);

  // Re-index in network order: first node position, outer block first.
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < out.nodes.size(); ++i)
    pos[out.nodes[i].id] = static_cast<int>(i);
  std::stable_sort(blocks.begin(), blocks.end(), [&](const auto& a, const auto& b) {
    const int pa = pos.at(a.first.node_ids.front());
    const int pb = pos.at(b.first.node_ids.front());
    if (pa != pb) return pa < pb;
    return a.first.node_ids.size() > b.first.node_ids.size();
  });
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].first.block_id = static_cast<int>(i);
    out.blocks.push_back(std::move(blocks[i].first));
    result.added.push_back(blocks[i].second);
  }
  validate_graph(out);
  return result;
}

std::vector<std::string> architecture_signature(const NetGraph& graph) {
  validate_graph(graph);
  std::vector<std::string> out;
  for (int i : topological_order(graph)) {
    const Layer& layer = graph.nodes[i].layer;
    std::ostringstream s;
    s << op_name(layer);
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      s << " " << c->c_in << "->" << c->c_out << " k" << c->kernel << " s"
        << c->stride << " p" << c->padding << " g" << c->groups;
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      s << " " << bn->channels();
    } else if (const auto* a = std::get_if<ActivationLayer>(&layer)) {
      s << " " << activation_name(a->kind);
    } else if (const auto* p = std::get_if<AvgPoolLayer>(&layer)) {
      s << " k" << p->kernel << " s" << p->stride;
    } else if (const auto* fc = std::get_if<LinearLayer>(&layer)) {
      s << " " << fc->in << "->" << fc->out;
    }
    out.push_back(s.str());
  }
  return out;
}

}  // namespace blockfuse
