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
#include <string>
#include <vector>

#include "blockfuse/graph.h"

namespace blockfuse {

struct ExpandOptions {
  double expand_ratio = 6.0;
  ActivationKind activation = ActivationKind::kReLU6;
  /// Seed for the new layers' weights (N(0, 1 / fan_in); batch norms start
  /// as identity).
  std::uint64_t seed = 0;
};

struct ExpandResult {
  NetGraph graph;
  /// Per block of `graph`: 1 when the expansion introduced it.
  std::vector<int> added;

  /// Mask that keeps every original block's activations and drops those of
  /// the added blocks, i.e. the mask that merges the expansion away.
  std::vector<int> collapse_mask() const;
};

/// Widens a network for training:
///  - every dense 3x3 conv outside blocks, except the first two and the last
///    conv outside blocks, becomes an inverted residual block
///    PW-BN-Act-DW(3x3, same stride and padding)-BN-Act-PW-BN;
///  - in every other existing inverted residual block (the 1st, 3rd, ...)
///    the first pointwise conv becomes a nested block with a 1x1 depthwise
///    kernel.
/// Throws TrainError when the graph has no inverted residual blocks and
/// fewer than four plain convs, so nothing could be expanded.
ExpandResult expand_for_training(const NetGraph& graph,
                                 const ExpandOptions& options = {});

/// One line per node in execution order describing its operator and
/// hyper-parameters; conv bias presence and node ids are ignored.
std::vector<std::string> architecture_signature(const NetGraph& graph);

}  // namespace blockfuse
