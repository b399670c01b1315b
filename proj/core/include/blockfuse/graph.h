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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockfuse/layers.h"
#include "blockfuse/tensor.h"

namespace blockfuse {

/// Reserved node id referring to the graph input.
inline constexpr const char* kGraphInput = "input";

struct Node {
  std::string id;
  Layer layer;
  std::vector<std::string> inputs;
};

enum class BlockKind { kInvertedResidual, kPlainConv };

const char* block_kind_name(BlockKind kind);
BlockKind parse_block_kind(const std::string& name);

/// Marks a single-entry single-exit chain of nodes as one block.
///
/// An inverted residual block is laid out as
///
///   segment, act, depthwise conv [bn], act, pointwise conv [bn] [add]
///
/// where the leading segment is either a pointwise conv or a nested
/// inverted residual block, optionally followed by bn. A plain_conv block is
/// a single conv optionally followed by bn and carries no activations; a
/// merged block becomes one. Both activations of an inverted residual block
/// share one mask slot.
struct BlockAnnotation {
  int block_id = 0;
  BlockKind kind = BlockKind::kInvertedResidual;
  std::vector<std::string> node_ids;
  double expand_ratio = 1.0;
  int dw_kernel = 1;
  int stride = 1;
  bool has_residual = false;
  std::vector<std::string> act_node_ids;
};

/// The compiler IR: nodes in any order, referring to producers by id.
/// Parameters live inside the layer records; weights files bind them.
struct NetGraph {
  Shape input_dims{1, 1, 1, 1};
  std::vector<Node> nodes;
  std::vector<BlockAnnotation> blocks;
  std::map<std::string, std::string> metadata;

  const Node* find(const std::string& id) const;
  Node* find(const std::string& id);
  /// Throws IrError when the id is unknown.
  const Node& node(const std::string& id) const;
  Node& node(const std::string& id);
};

/// node id -> output dims, plus kGraphInput -> input_dims.
using ShapeTable = std::map<std::string, Shape>;

/// Checks every IR invariant and infers shapes. Never mutates the graph.
/// Throws ValidationError naming the offending node or block_id.
ShapeTable validate_graph(const NetGraph& graph);

/// Node indices in a deterministic topological order (ties broken by
/// position in graph.nodes). Throws IrError on dangling references or cycles.
std::vector<int> topological_order(const NetGraph& graph);

/// Id of the unique node without consumers.
std::string sink_id(const NetGraph& graph);

/// Ids of nodes that consume `id`.
std::vector<std::string> consumers(const NetGraph& graph, const std::string& id);

/// Input id of the block's first node (the block entry tensor).
std::string block_entry(const NetGraph& graph, const BlockAnnotation& block);
/// Last node of the block (the Add when residual).
const std::string& block_exit(const BlockAnnotation& block);

/// Disables the activations of every block whose mask entry is 0 by turning
/// its activation nodes into Identity. Entry 1 leaves the block untouched.
NetGraph apply_mask_vector(const NetGraph& graph, std::span<const int> mask);

/// Same topology, hyper-parameters, blocks and metadata; weights ignored.
bool structurally_equal(const NetGraph& a, const NetGraph& b);

/// Per-block measured latency.
struct LatencyTable {
  std::vector<std::pair<int, double>> entries;

  std::optional<double> find(int block_id) const;
};

/// Throws ValidationError unless the table has exactly one positive entry per
/// block of `graph`.
void check_latency_table(const LatencyTable& table, const NetGraph& graph);

}  // namespace blockfuse
