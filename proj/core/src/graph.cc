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

#include "blockfuse/graph.h"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <unordered_map>

#include "blockfuse/errors.h"
#include "blockfuse/kernels.h"

namespace blockfuse {

const char* block_kind_name(BlockKind kind) {
  return kind == BlockKind::kInvertedResidual ? "inverted_residual"
                                              : "plain_conv";
}

BlockKind parse_block_kind(const std::string& name) {
  if (name == "inverted_residual") return BlockKind::kInvertedResidual;
  if (name == "plain_conv") return BlockKind::kPlainConv;
  throw ParseError("unknown block kind '" + name + "'");
}

const Node* NetGraph::find(const std::string& id) const {
  for (const Node& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

Node* NetGraph::find(const std::string& id) {
  for (Node& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

const Node& NetGraph::node(const std::string& id) const {
  const Node* n = find(id);
  if (n == nullptr) throw IrError("unknown node '" + id + "'");
  return *n;
}

Node& NetGraph::node(const std::string& id) {
  Node* n = find(id);
  if (n == nullptr) throw IrError("unknown node '" + id + "'");
  return *n;
}

std::vector<int> topological_order(const NetGraph& graph) {
  const int count = static_cast<int>(graph.nodes.size());
  std::unordered_map<std::string, int> index;
  for (int i = 0; i < count; ++i) index.emplace(graph.nodes[i].id, i);

  std::vector<int> pending(count, 0);
  std::vector<std::vector<int>> users(count);
  for (int i = 0; i < count; ++i) {
    for (const std::string& in : graph.nodes[i].inputs) {
      if (in == kGraphInput) continue;
      auto it = index.find(in);
      if (it == index.end()) {
        throw IrError("node '" + graph.nodes[i].id +
                      "' references unknown input '" + in + "'");
      }
      users[it->second].push_back(i);
      ++pending[i];
    }
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < count; ++i) {
    if (pending[i] == 0) ready.push(i);
  }
  std::vector<int> order;
  order.reserve(count);
  while (!ready.empty()) {
    const int i = ready.top();
    ready.pop();
    order.push_back(i);
    for (int u : users[i]) {
      if (--pending[u] == 0) ready.push(u);
    }
  }
  if (static_cast<int>(order.size()) != count) {
    throw IrError("graph contains a cycle");
  }
  return order;
}

std::vector<std::string> consumers(const NetGraph& graph,
                                   const std::string& id) {
  std::vector<std::string> out;
  for (const Node& n : graph.nodes) {
    for (const std::string& in : n.inputs) {
      if (in == id) {
        out.push_back(n.id);
        break;
      }
    }
  }
  return out;
}

std::string sink_id(const NetGraph& graph) {
  std::set<std::string> used;
  for (const Node& n : graph.nodes) {
    used.insert(n.inputs.begin(), n.inputs.end());
  }
  std::vector<std::string> sinks;
  for (const Node& n : graph.nodes) {
    if (!used.count(n.id)) sinks.push_back(n.id);
  }
  if (sinks.size() != 1) {
    std::string names;
    for (const auto& s : sinks) names += (names.empty() ? "" : ", ") + s;
    throw ValidationError("graph must have exactly one sink, found " +
                          std::to_string(sinks.size()) +
                          (names.empty() ? "" : " (" + names + ")"));
  }
  return sinks.front();
}

std::string block_entry(const NetGraph& graph, const BlockAnnotation& block) {
  if (block.node_ids.empty()) {
    throw ValidationError("block " + std::to_string(block.block_id) +
                          " has no nodes");
  }
  const Node& first = graph.node(block.node_ids.front());
  if (first.inputs.size() != 1) {
    throw ValidationError("block " + std::to_string(block.block_id) +
                          " must start with a single-input node");
  }
  return first.inputs.front();
}

const std::string& block_exit(const BlockAnnotation& block) {
  return block.node_ids.back();
}

namespace {

[[noreturn]] void block_error(const BlockAnnotation& b, const std::string& msg) {
  throw ValidationError("block " + std::to_string(b.block_id) + ": " + msg);
}

bool is_conv(const Node& n) { return std::holds_alternative<ConvLayer>(n.layer); }
bool is_bn(const Node& n) {
  return std::holds_alternative<BatchNormLayer>(n.layer);
}
bool is_act(const Node& n) {
  return std::holds_alternative<ActivationLayer>(n.layer);
}
bool is_add(const Node& n) { return std::holds_alternative<AddLayer>(n.layer); }

struct BlockChecker {
  const NetGraph& graph;
  const ShapeTable& shapes;
  std::unordered_map<std::string, int> position;  // topological position
  std::unordered_map<std::string, int> consumer_count;

  // Consumes "(conv | nested block) [bn]" starting at chain[i]. Returns the
  // index after the segment and the conv/nested-block channel counts.
  std::size_t segment(const BlockAnnotation& outer,
                      const std::vector<std::string>& chain, std::size_t i,
                      bool allow_nested, const ConvLayer** conv_out) {
    *conv_out = nullptr;
    if (i >= chain.size()) block_error(outer, "chain ends early");
    bool consumed = false;
    if (allow_nested) {
      for (const BlockAnnotation& inner : graph.blocks) {
        if (&inner == &outer || inner.node_ids.empty()) continue;
        if (inner.node_ids.front() != chain[i]) continue;
        if (inner.node_ids.size() >= chain.size() - i) continue;
        if (!std::equal(inner.node_ids.begin(), inner.node_ids.end(),
                        chain.begin() + static_cast<long>(i))) {
          block_error(outer, "nested block " + std::to_string(inner.block_id) +
                                 " is not a prefix segment");
        }
        i += inner.node_ids.size();
        consumed = true;
        break;
      }
    }
    if (!consumed) {
      const Node& n = graph.node(chain[i]);
      if (!is_conv(n)) {
        block_error(outer, "expected conv at node '" + n.id + "'");
      }
      *conv_out = &std::get<ConvLayer>(n.layer);
      ++i;
    }
    if (i < chain.size() && is_bn(graph.node(chain[i]))) ++i;
    return i;
  }

  void check_chain(const BlockAnnotation& b, std::vector<std::string>& chain) {
    // Chain must be linear: each node fed by the previous one, and every
    // node except the last consumed only by its successor.
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const Node& n = graph.node(chain[i]);
      if (i > 0) {
        if (n.inputs.size() != 1 || n.inputs[0] != chain[i - 1]) {
          block_error(b, "node '" + n.id + "' is not fed by '" + chain[i - 1] +
                             "'");
        }
      } else if (n.inputs.size() != 1) {
        block_error(b, "entry node '" + n.id + "' must have one input");
      }
      if (i + 1 < chain.size() && consumer_count[n.id] != 1) {
        block_error(b, "node '" + n.id +
                           "' escapes the block (multiple consumers)");
      }
    }
  }

  void check(const BlockAnnotation& b) {
    if (b.node_ids.empty()) block_error(b, "no nodes");
    std::set<std::string> seen;
    for (const std::string& id : b.node_ids) {
      if (graph.find(id) == nullptr) block_error(b, "unknown node '" + id + "'");
      if (!seen.insert(id).second) block_error(b, "duplicate node '" + id + "'");
    }
    for (std::size_t i = 1; i < b.node_ids.size(); ++i) {
      if (position[b.node_ids[i]] <= position[b.node_ids[i - 1]]) {
        block_error(b, "node_ids are not in network order");
      }
    }
    if (!(b.expand_ratio > 0.0)) block_error(b, "expand_ratio must be positive");
    if (b.dw_kernel <= 0 ||
        (b.kind == BlockKind::kInvertedResidual && b.dw_kernel % 2 == 0)) {
      block_error(b, "dw_kernel must be a positive odd integer");
    }
    if (b.stride <= 0) block_error(b, "stride must be positive");
    if (b.act_node_ids.size() != 0 && b.act_node_ids.size() != 2) {
      block_error(b, "act_node_ids must list 0 or 2 nodes");
    }

    std::vector<std::string> chain = b.node_ids;
    const std::string entry = block_entry(graph, b);
    if (b.has_residual) {
      const Node& last = graph.node(chain.back());
      if (!is_add(last)) block_error(b, "residual block must end with add");
      chain.pop_back();
      if (chain.empty()) block_error(b, "residual block has no body");
      const bool wired = (last.inputs[0] == chain.back() && last.inputs[1] == entry) ||
                         (last.inputs[1] == chain.back() && last.inputs[0] == entry);
      if (!wired) {
        block_error(b, "add '" + last.id +
                           "' must join the block body and the block entry");
      }
      if (b.stride != 1) block_error(b, "residual block must have stride 1");
      if (shapes.at(entry) != shapes.at(chain.back())) {
        block_error(b, "residual block input " + to_string(shapes.at(entry)) +
                           " differs from output " +
                           to_string(shapes.at(chain.back())));
      }
    }
    check_chain(b, chain);
    for (const std::string& id : chain) {
      if (is_add(graph.node(id))) block_error(b, "unexpected add '" + id + "'");
    }

    if (b.kind == BlockKind::kPlainConv) {
      if (!b.act_node_ids.empty()) block_error(b, "plain_conv carries no activations");
      const ConvLayer* conv = nullptr;
      if (segment(b, chain, 0, false, &conv) != chain.size()) {
        block_error(b, "plain_conv must be conv [bn]");
      }
      return;
    }

    if (b.act_node_ids.size() != 2) {
      block_error(b, "inverted_residual needs exactly 2 activation nodes");
    }
    const ConvLayer* pw1 = nullptr;
    const ConvLayer* dw = nullptr;
    const ConvLayer* pw2 = nullptr;
    std::size_t i = segment(b, chain, 0, true, &pw1);
    if (pw1 != nullptr && pw1->kernel != 1) {
      block_error(b, "expansion conv must be pointwise");
    }
    auto expect_act = [&](int slot) {
      if (i >= chain.size() || chain[i] != b.act_node_ids[slot] ||
          !is_act(graph.node(chain[i]))) {
        block_error(b, "expected activation '" + b.act_node_ids[slot] +
                           "' at position " + std::to_string(i));
      }
      ++i;
    };
    expect_act(0);
    const std::string dw_id = i < chain.size() ? chain[i] : "";
    i = segment(b, chain, i, false, &dw);
    if (!dw->is_depthwise() && !(dw->groups == 1 && dw->c_in == 1 && dw->c_out == 1)) {
      block_error(b, "node '" + dw_id + "' must be a depthwise conv");
    }
    if (dw->kernel != b.dw_kernel) {
      block_error(b, "depthwise kernel " + std::to_string(dw->kernel) +
                         " differs from dw_kernel " +
                         std::to_string(b.dw_kernel));
    }
    if (dw->stride != b.stride) {
      block_error(b, "depthwise stride " + std::to_string(dw->stride) +
                         " differs from block stride " +
                         std::to_string(b.stride));
    }
    expect_act(1);
    i = segment(b, chain, i, false, &pw2);
    if (pw2->kernel != 1) block_error(b, "projection conv must be pointwise");
    if (i != chain.size()) {
      block_error(b, "unexpected trailing node '" + chain[i] + "'");
    }
    const int c_in = shapes.at(entry)[1];
    const int hidden = dw->c_in;
    if (std::abs(hidden - b.expand_ratio * c_in) >= 0.5) {
      block_error(b, "hidden width " + std::to_string(hidden) +
                         " does not match expand_ratio * c_in");
    }
  }
};

}  // namespace

ShapeTable validate_graph(const NetGraph& graph) {
  if (graph.nodes.empty()) throw ValidationError("graph has no nodes");
  for (int d : graph.input_dims) {
    if (d <= 0) {
      throw ValidationError("input_dims must be positive, got " +
                            to_string(graph.input_dims));
    }
  }
  std::set<std::string> ids;
  for (const Node& n : graph.nodes) {
    if (n.id.empty()) throw ValidationError("empty node id");
    if (n.id == kGraphInput) {
      throw ValidationError("node id '" + n.id + "' is reserved");
    }
    if (!ids.insert(n.id).second) {
      throw ValidationError("duplicate node id '" + n.id + "'");
    }
  }
  for (const Node& n : graph.nodes) {
    if (static_cast<int>(n.inputs.size()) != arity(n.layer)) {
      throw ValidationError("node '" + n.id + "' (" + op_name(n.layer) +
                            ") expects " + std::to_string(arity(n.layer)) +
                            " input(s), has " + std::to_string(n.inputs.size()));
    }
    for (const std::string& in : n.inputs) {
      if (in != kGraphInput && !ids.count(in)) {
        throw ValidationError("node '" + n.id +
                              "' references dangling input '" + in + "'");
      }
    }
  }
  std::vector<int> order;
  try {
    order = topological_order(graph);
  } catch (const ValidationError&) {
    throw;
  } catch (const IrError& e) {
    throw ValidationError(e.what());
  }
  sink_id(graph);

  ShapeTable shapes;
  shapes[kGraphInput] = graph.input_dims;
  for (int idx : order) {
    const Node& n = graph.nodes[idx];
    std::vector<Shape> in_shapes;
    for (const std::string& in : n.inputs) in_shapes.push_back(shapes.at(in));
    try {
      std::visit(
          [](const auto& l) {
            if constexpr (requires { l.check(); }) l.check();
          },
          n.layer);
      shapes[n.id] = output_shape(n.layer, in_shapes);
    } catch (const Error& e) {
      throw ValidationError("shape conflict at node '" + n.id + "': " + e.what());
    }
  }

  BlockChecker checker{graph, shapes, {}, {}};
  for (std::size_t p = 0; p < order.size(); ++p) {
    checker.position[graph.nodes[order[p]].id] = static_cast<int>(p);
  }
  for (const Node& n : graph.nodes) {
    for (const std::string& in : n.inputs) ++checker.consumer_count[in];
  }
  for (std::size_t i = 0; i < graph.blocks.size(); ++i) {
    const BlockAnnotation& b = graph.blocks[i];
    if (b.block_id != static_cast<int>(i)) {
      throw ValidationError(
          "block at position " + std::to_string(i) + " has block_id " +
          std::to_string(b.block_id) +
          "; blocks must be re-indexed 0..N-1 in network order");
    }
  }
  for (const BlockAnnotation& b : graph.blocks) checker.check(b);
  for (std::size_t i = 1; i < graph.blocks.size(); ++i) {
    const BlockAnnotation& a = graph.blocks[i - 1];
    const BlockAnnotation& b = graph.blocks[i];
    const auto key = [&](const BlockAnnotation& x) {
      return std::pair(checker.position[x.node_ids.front()],
                       -static_cast<int>(x.node_ids.size()));
    };
    if (!(key(a) < key(b))) {
      throw ValidationError("block " + std::to_string(b.block_id) +
                            " is out of network order; blocks must be "
                            "re-indexed 0..N-1 in network order");
    }
  }
  // Blocks are disjoint or nested.
  for (std::size_t i = 0; i < graph.blocks.size(); ++i) {
    const std::set<std::string> a(graph.blocks[i].node_ids.begin(),
                                  graph.blocks[i].node_ids.end());
    for (std::size_t j = i + 1; j < graph.blocks.size(); ++j) {
      const auto& other = graph.blocks[j].node_ids;
      const auto shared = std::count_if(other.begin(), other.end(),
                                        [&](const auto& id) { return a.count(id) > 0; });
      if (shared != 0 && static_cast<std::size_t>(shared) != other.size() &&
          static_cast<std::size_t>(shared) != a.size()) {
        throw ValidationError("block " + std::to_string(j) +
                              " partially overlaps block " + std::to_string(i));
      }
    }
  }
  return shapes;
}

NetGraph apply_mask_vector(const NetGraph& graph, std::span<const int> mask) {
  if (mask.size() != graph.blocks.size()) {
    throw ValidationError("mask has " + std::to_string(mask.size()) +
                          " entries but graph has " +
                          std::to_string(graph.blocks.size()) + " blocks");
  }
  NetGraph out = graph;
  for (std::size_t b = 0; b < mask.size(); ++b) {
    if (mask[b] != 0 && mask[b] != 1) {
      throw ValidationError("mask entry " + std::to_string(b) +
                            " must be 0 or 1");
    }
    if (mask[b] == 1) continue;
    for (const std::string& id : graph.blocks[b].act_node_ids) {
      Node& n = out.node(id);
      auto* act = std::get_if<ActivationLayer>(&n.layer);
      if (act == nullptr) {
        throw ValidationError("block " + std::to_string(b) + ": node '" + id +
                              "' is not an activation");
      }
      act->kind = ActivationKind::kIdentity;
    }
  }
  return out;
}

namespace {

bool same_block(const BlockAnnotation& a, const BlockAnnotation& b) {
  return a.block_id == b.block_id && a.kind == b.kind &&
         a.node_ids == b.node_ids && a.expand_ratio == b.expand_ratio &&
         a.dw_kernel == b.dw_kernel && a.stride == b.stride &&
         a.has_residual == b.has_residual && a.act_node_ids == b.act_node_ids;
}

}  // namespace

bool structurally_equal(const NetGraph& a, const NetGraph& b) {
  if (a.input_dims != b.input_dims || a.nodes.size() != b.nodes.size() ||
      a.blocks.size() != b.blocks.size() || a.metadata != b.metadata) {
    return false;
  }
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const Node& x = a.nodes[i];
    const Node& y = b.nodes[i];
    if (x.id != y.id || x.inputs != y.inputs || !same_structure(x.layer, y.layer)) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    if (!same_block(a.blocks[i], b.blocks[i])) return false;
  }
  return true;
}

std::optional<double> LatencyTable::find(int block_id) const {
  for (const auto& [id, ms] : entries) {
    if (id == block_id) return ms;
  }
  return std::nullopt;
}

void check_latency_table(const LatencyTable& table, const NetGraph& graph) {
  std::set<int> seen;
  for (const auto& [id, ms] : table.entries) {
    if (!seen.insert(id).second) {
      throw ValidationError("duplicate latency entry for block " +
                            std::to_string(id));
    }
    if (!(ms > 0.0) || !std::isfinite(ms)) {
      throw ValidationError("latency of block " + std::to_string(id) +
                            " must be positive");
    }
    if (id < 0 || id >= static_cast<int>(graph.blocks.size())) {
      throw ValidationError("latency entry for unknown block " +
                            std::to_string(id));
    }
  }
  for (const BlockAnnotation& b : graph.blocks) {
    if (!seen.count(b.block_id)) {
      throw ValidationError("latency table is missing block " +
                            std::to_string(b.block_id));
    }
  }
}

}  // namespace blockfuse
