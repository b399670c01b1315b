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
#include <utility>
#include <vector>

#include "blockfuse/graph.h"

namespace blockfuse {

/// MobileNetV2 at `width` multiplier: stem, 17 inverted residual blocks,
/// 1x1 head conv, global pooling and a classifier. Every block uses the
/// uniform PW-DW-PW layout, so the first block (expand ratio 1) carries a
/// 1x1 expansion conv as well.
NetGraph make_mobilenet_v2(double width = 1.0, int resolution = 224,
                           int num_classes = 1000);

/// Desk-scale network of `blocks` inverted residual blocks over 3x8x8 inputs
/// with two classes. Block 1 (when present) is a stride-2 block widening the
/// channels; the others are residual.
NetGraph make_toy_irb(int blocks, int resolution = 8, int num_classes = 2);

/// Five plain 3x3 conv-bn-relu layers with two pooling stages and a
/// classifier, over 3x16x16 inputs.
NetGraph make_vgg_toy(int resolution = 16, int num_classes = 2);

struct InitOptions {
  /// beta = 0 and running_mean = 0 everywhere and convs without bias, so
  /// every fold produces zero bias.
  bool zero_bias = true;
};

/// Seeded random parameters: conv and linear weights ~ N(0, 1 / fan_in),
/// batch-norm gamma ~ U(0.5, 1.5) (U(0.25, 0.75) on a block's last bn),
/// running_var ~ U(0.5, 2). With zero_bias off, beta and running_mean
/// ~ N(0, 0.1^2) and conv/linear biases ~ N(0, 0.1^2).
NetGraph randomize_weights(const NetGraph& graph, std::uint64_t seed,
                           const InitOptions& options = {});

/// Remaining-activation mask vectors (1 = kept) for the 17-block
/// MobileNetV2-1.4 family, keyed "ds-a" ... "ds-f".
const std::vector<std::pair<std::string, std::vector<int>>>& mbv2_14_masks();
/// Same for MobileNetV2 (width 1.0), "ds-a" ... "ds-d".
const std::vector<std::pair<std::string, std::vector<int>>>& mbv2_masks();

/// Builds a named fixture: "mbv2", "mbv2-1.4", "toy-irb-<N>", "vgg-toy".
/// Throws Error for an unknown name. `resolution` <= 0 picks the fixture's
/// default.
NetGraph make_fixture(const std::string& name, int resolution = 0);

/// Stand-in latency per block proportional to its FLOPs (1 ms per MFLOP,
/// floored at 1e-3 ms).
LatencyTable flops_latency_table(const NetGraph& graph);

}  // namespace blockfuse
