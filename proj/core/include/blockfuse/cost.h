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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockfuse/graph.h"

namespace blockfuse {

// All counts are per sample (batch 1). One FLOP is one multiply-accumulate.

/// out_h * out_w * kernel^2 * (c_in / groups) * c_out.
std::int64_t conv_macs(const ConvLayer& conv, int out_h, int out_w);
/// MACs of one node given its output shape; zero for bn/act/add/pool/flatten.
std::int64_t layer_macs(const Layer& layer, const Shape& out);
std::int64_t parameter_count(const Layer& layer);

struct NodeCost {
  std::string node_id;
  std::int64_t flops = 0;
  std::int64_t weight_bytes = 0;
  /// input + output (+ live residual) bytes while the node runs; convs and
  /// linear layers only, zero otherwise.
  std::int64_t activation_bytes = 0;
};

struct BlockCost {
  int block_id = 0;
  std::int64_t flops = 0;
  std::int64_t weight_bytes = 0;
  std::int64_t peak_activation_bytes = 0;
  std::optional<double> latency_ms;
};

struct CostReport {
  int precision_bits = 16;
  std::vector<NodeCost> nodes;
  std::vector<BlockCost> blocks;
  std::int64_t total_flops = 0;
  std::int64_t total_weight_bytes = 0;
  /// Max over all nodes, inside or outside blocks.
  std::int64_t peak_activation_bytes = 0;
  std::optional<double> total_latency_ms;
};

/// Full accounting: FLOPs, weights and peak activations at `precision_bits`,
/// plus latency when a table is supplied. Throws ValidationError for an
/// invalid graph.
CostReport cost_report(const NetGraph& graph, int precision_bits = 16,
                       const LatencyTable* latency = nullptr);

/// FLOPs view (precision 16 for the byte columns).
CostReport flops_of_graph(const NetGraph& graph);

/// Peak activation accounting: per block, the max over its convolutions of
/// input + output + live residual tensor bytes.
CostReport memory_footprint(const NetGraph& graph, int precision_bits);

std::string cost_report_to_json(const CostReport& report);
std::string cost_report_to_text(const CostReport& report);

/// Geometry of an inverted residual block for closed-form accounting.
struct BlockGeometry {
  int c_in = 1;
  int c_out = 1;
  double expand_ratio = 1.0;
  int kernel = 3;
  int stride = 1;
  int in_h = 1;
  int in_w = 1;

  int hidden() const;
  int out_h() const;
  int out_w() const;
  /// PW expand + DW + PW project MACs.
  std::int64_t flops() const;
};

struct FlopsMatch {
  ConvLayer conv;  // dense, zero weights
  double alpha = 1.0;
  std::int64_t target_flops = 0;
  std::int64_t achieved_flops = 0;
  int out_h = 0;
  int out_w = 0;

  double relative_error() const;
};

/// Dense conv with the block's depthwise kernel and stride whose channels
/// are the block's (c_in, c_out) scaled by alpha = sqrt(F_block / F_base).
/// The narrower side is rounded to nearest; the wider side is then chosen
/// so the product lands closest to the target. Throws CostError for a
/// zero-FLOP block.
FlopsMatch flops_matched_dense(const BlockGeometry& block);
/// Graph version: block FLOPs are summed over its nodes. A plain_conv block
/// yields alpha = 1 and its own conv spec.
FlopsMatch flops_matched_dense(const NetGraph& graph,
                               const BlockAnnotation& block);

/// lambda_b = latency_b / max latency. Throws ValidationError naming a
/// missing block.
std::vector<double> latency_decay_weights(const LatencyTable& table,
                                          int num_blocks);

}  // namespace blockfuse
