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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blockfuse/graph.h"
#include "blockfuse/layers.h"

namespace blockfuse {

/// A dense (groups = 1) convolution standing in for a chain of linear
/// layers.
struct MergedConv {
  ConvLayer conv;
  /// Source node ids, in chain order.
  std::vector<std::string> provenance;
  /// False when a non-zero field produced before a zero-padded conv was
  /// folded in: such a chain differs from one conv along the border.
  bool boundary_exact = true;
  /// Appended for fine-tuning only; never part of equivalence checks.
  std::optional<ActivationKind> free_activation;
};

/// K' = K * gamma / sqrt(var + eps) per output channel,
/// b' = beta + (b - mean) * gamma / sqrt(var + eps).
ConvLayer fold_bn_into_conv(const ConvLayer& conv, const BatchNormLayer& bn);

/// Grouped (including depthwise) conv as an equivalent groups = 1 conv.
ConvLayer lift_to_dense(const ConvLayer& conv);
/// k x k average pool over `channels` channels as a dense conv with 1/k^2 on
/// the channel diagonal.
ConvLayer lift_to_dense(const AvgPoolLayer& pool, int channels);

/// Kernel size of `second` after `first`: (d2 - 1) * s1 + d1.
int composed_kernel_size(int first_kernel, int first_stride, int second_kernel);

/// Composes two dense convs into one. The merged conv has kernel
/// (d2 - 1) * s1 + d1, stride s1 * s2, padding p1 + s1 * p2 and
///
///   K[t, r, u, v] = sum_{p, q, s} K2[t, s, p, q] * K1[s, r, u - s1 p, v - s1 q]
///   b[t]          = b2[t] + sum_{p, q, s} K2[t, s, p, q] * b1[s]
///
/// Throws MergeError on a channel mismatch and PreconditionError when either
/// conv is grouped.
MergedConv compose_convs(const ConvLayer& first, const ConvLayer& second);
MergedConv compose_convs(const MergedConv& first, const ConvLayer& second);

/// Adds the identity skip to a same-size conv: +1 on the centre tap of each
/// channel's diagonal.
ConvLayer absorb_residual(const ConvLayer& conv);

struct MergeOptions {
  /// Tag the result with a free activation for fine-tuning.
  std::optional<ActivationKind> free_activation;
};

/// Collapses an activation-free block (BN folded, grouped convs lifted,
/// compositions chained, residual absorbed). Throws MergeError listing the
/// activation nodes that are not Identity.
MergedConv merge_block(const NetGraph& graph, const BlockAnnotation& block,
                       const MergeOptions& options = {});

struct BlockShrink {
  int block_id = 0;
  bool merged = false;
  int kernel = 0;
  int stride = 0;
  int c_in = 0;
  int c_out = 0;
  std::int64_t flops_before = 0;
  std::int64_t flops_after = 0;
  bool boundary_exact = true;
  std::vector<std::string> provenance;
};

struct ShrinkReport {
  std::vector<BlockShrink> blocks;

  bool all_boundary_exact() const;
  /// ceil((d - 1) / 2) for the largest merged kernel d that is not
  /// boundary-exact; zero when every merge is exact.
  int border() const;
};

std::string shrink_report_to_json(const ShrinkReport& report);

struct ShrinkOptions {
  /// Insert this activation after every merged conv.
  std::optional<ActivationKind> free_activation;
};

struct ShrinkResult {
  NetGraph graph;
  ShrinkReport report;
  /// Mask re-indexed onto the surviving blocks.
  std::vector<int> mask;
};

/// Replaces every mask-0 block by its merged conv. Merged blocks remain as
/// plain_conv blocks; blocks nested inside a merged block disappear and the
/// survivors are re-indexed. Metadata records "shrink.boundary_exact" and
/// "shrink.border" for verify_equivalence.
ShrinkResult shrink_graph(const NetGraph& graph, std::span<const int> mask,
                          const ShrinkOptions& options = {});

struct EquivalenceReport {
  int n_samples = 0;
  double max_abs_err = 0.0;
  /// max_abs_err / max |before|.
  double max_rel_err = 0.0;
  /// Error excluding `border` output pixels on every spatial edge; zero when
  /// nothing is left after removing the border.
  double interior_max_abs_err = 0.0;
  int border = 0;
  bool boundary_exact = true;
  double tol = 0.0;
  bool pass = false;
};

struct VerifyOptions {
  int n_samples = 8;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF64;
  /// Defaults to g_after's "shrink.border" / "shrink.boundary_exact"
  /// metadata when unset.
  std::optional<int> border;
  std::optional<bool> boundary_exact;
};

/// Evaluates both graphs on seeded standard-normal inputs. pass requires the
/// interior error within tol, and also the full error when every merge was
/// boundary-exact. Throws ShapeError when the graphs disagree on dims.
EquivalenceReport verify_equivalence(const NetGraph& before,
                                     const NetGraph& after,
                                     const VerifyOptions& options);

std::string equivalence_report_to_json(const EquivalenceReport& report);

}  // namespace blockfuse
