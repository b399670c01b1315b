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

#include "blockfuse/merge.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

#include "blockfuse/cost.h"
#include "blockfuse/errors.h"
#include "blockfuse/executor.h"
#include "blockfuse/rng.h"

namespace blockfuse {

ConvLayer fold_bn_into_conv(const ConvLayer& conv, const BatchNormLayer& bn) {
  conv.check();
  bn.check();
  if (bn.channels() != conv.c_out) {
    throw MergeError("cannot fold batch norm with " +
                     std::to_string(bn.channels()) + " channels into conv with " +
                     std::to_string(conv.c_out) + " output channels");
  }
  ConvLayer out = conv;
  out.bias.assign(conv.c_out, 0.0);
  const Shape ws = conv.weight_shape();
  for (int o = 0; o < conv.c_out; ++o) {
    const double a = bn.scale(o);
    for (int i = 0; i < ws[1]; ++i) {
      for (int kh = 0; kh < ws[2]; ++kh) {
        for (int kw = 0; kw < ws[3]; ++kw) out.w(o, i, kh, kw) *= a;
      }
    }
    const double b = conv.has_bias() ? conv.bias[o] : 0.0;
    out.bias[o] = bn.beta[o] + (b - bn.running_mean[o]) * a;
  }
  return out;
}

ConvLayer lift_to_dense(const ConvLayer& conv) {
  conv.check();
  if (conv.groups == 1) return conv;
  ConvLayer dense = ConvLayer::make(conv.c_in, conv.c_out, conv.kernel,
                                    conv.stride, conv.padding, 1, false);
  dense.bias = conv.bias;
  const int cin_g = conv.c_in / conv.groups;
  const int cout_g = conv.c_out / conv.groups;
  for (int o = 0; o < conv.c_out; ++o) {
    const int g = o / cout_g;
    for (int i = 0; i < cin_g; ++i) {
      for (int kh = 0; kh < conv.kernel; ++kh) {
        for (int kw = 0; kw < conv.kernel; ++kw) {
          dense.w(o, g * cin_g + i, kh, kw) = conv.w(o, i, kh, kw);
        }
      }
    }
  }
  return dense;
}

ConvLayer lift_to_dense(const AvgPoolLayer& pool, int channels) {
  ConvLayer dense =
      ConvLayer::make(channels, channels, pool.kernel, pool.stride, 0, 1, false);
  const double v = 1.0 / (static_cast<double>(pool.kernel) * pool.kernel);
  for (int c = 0; c < channels; ++c) {
    for (int kh = 0; kh < pool.kernel; ++kh) {
      for (int kw = 0; kw < pool.kernel; ++kw) dense.w(c, c, kh, kw) = v;
    }
  }
  return dense;
}

int composed_kernel_size(int first_kernel, int first_stride, int second_kernel) {
  return (second_kernel - 1) * first_stride + first_kernel;
}

namespace {

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

MergedConv compose_convs(const ConvLayer& first, const ConvLayer& second) {
  first.check();
  second.check();
  if (first.groups != 1 || second.groups != 1) {
    throw PreconditionError(
        "compose_convs needs dense convs; lift grouped convs first");
  }
  if (first.c_out != second.c_in) {
    throw MergeError("channel mismatch: first conv emits " +
                     std::to_string(first.c_out) +
                     " channels, second consumes " + std::to_string(second.c_in));
  }
  const int d1 = first.kernel, d2 = second.kernel, s1 = first.stride;
  const int d = composed_kernel_size(d1, s1, d2);
  const bool with_bias = first.has_bias() || second.has_bias();
  MergedConv merged;
  merged.conv = ConvLayer::make(first.c_in, second.c_out, d, s1 * second.stride,
                                first.padding + s1 * second.padding, 1, with_bias);
  ConvLayer& k = merged.conv;
  for (int t = 0; t < second.c_out; ++t) {
    for (int s = 0; s < second.c_in; ++s) {
      for (int p = 0; p < d2; ++p) {
        for (int q = 0; q < d2; ++q) {
          const double k2 = second.w(t, s, p, q);
          if (k2 == 0.0) continue;
          for (int r = 0; r < first.c_in; ++r) {
            for (int i = 0; i < d1; ++i) {
              for (int j = 0; j < d1; ++j) {
                k.w(t, r, p * s1 + i, q * s1 + j) += k2 * first.w(s, r, i, j);
              }
            }
          }
        }
      }
    }
  }
  if (with_bias) {
    for (int t = 0; t < second.c_out; ++t) {
      double b = second.has_bias() ? second.bias[t] : 0.0;
      if (first.has_bias()) {
        for (int s = 0; s < second.c_in; ++s) {
          double tap_sum = 0.0;
          for (int p = 0; p < d2; ++p) {
            for (int q = 0; q < d2; ++q) tap_sum += second.w(t, s, p, q);
          }
          b += first.bias[s] * tap_sum;
        }
      }
      k.bias[t] = b;
    }
  }
  // Zero padding of `second` replaces the first conv's output outside its
  // extent with zeros; the merged conv sees the first conv evaluated there
  // instead. Only a bias-free pointwise first conv evaluates to zero there.
  const bool first_vanishes_outside =
      d1 == 1 && first.padding == 0 && (!first.has_bias() || all_zero(first.bias));
  merged.boundary_exact = second.padding == 0 || first_vanishes_outside;
  return merged;
}

MergedConv compose_convs(const MergedConv& first, const ConvLayer& second) {
  MergedConv merged = compose_convs(first.conv, second);
  merged.boundary_exact = merged.boundary_exact && first.boundary_exact;
  merged.provenance = first.provenance;
  merged.free_activation = first.free_activation;
  return merged;
}

ConvLayer absorb_residual(const ConvLayer& conv) {
  conv.check();
  if (conv.stride != 1) {
    throw PreconditionError("absorb_residual needs stride 1, got " +
                            std::to_string(conv.stride));
  }
  if (conv.c_in != conv.c_out) {
    throw PreconditionError("absorb_residual needs c_in == c_out, got " +
                            std::to_string(conv.c_in) + " -> " +
                            std::to_string(conv.c_out));
  }
  if (conv.kernel % 2 == 0) {
    throw PreconditionError("absorb_residual needs an odd kernel, got " +
                            std::to_string(conv.kernel));
  }
  if (conv.padding != (conv.kernel - 1) / 2) {
    throw PreconditionError("absorb_residual needs padding " +
                            std::to_string((conv.kernel - 1) / 2) + ", got " +
                            std::to_string(conv.padding));
  }
  ConvLayer out = conv;
  const int centre = (conv.kernel - 1) / 2;
  const int per_group = conv.c_in / conv.groups;
  for (int r = 0; r < conv.c_out; ++r) {
    out.w(r, r % per_group, centre, centre) += 1.0;
  }
  return out;
}

MergedConv merge_block(const NetGraph& graph, const BlockAnnotation& block,
                       const MergeOptions& options) {
  std::vector<std::string> chain = block.node_ids;
  if (block.has_residual && !chain.empty()) chain.pop_back();

  std::vector<std::string> active;
  for (const std::string& id : chain) {
    const auto* act = std::get_if<ActivationLayer>(&graph.node(id).layer);
    if (act != nullptr && act->kind != ActivationKind::kIdentity) {
      active.push_back(id);
    }
  }
  if (!active.empty()) {
    std::string names;
    for (const auto& id : active) names += (names.empty() ? "" : ", ") + id;
    throw MergeError("block " + std::to_string(block.block_id) +
                     " is not mergeable: activations still present: " + names);
  }

  std::optional<MergedConv> cur;
  for (const std::string& id : chain) {
    const Layer& layer = graph.node(id).layer;
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const ConvLayer dense = lift_to_dense(*conv);
      if (cur) {
        cur = compose_convs(*cur, dense);
      } else {
        cur = MergedConv{dense, {}, true, std::nullopt};
      }
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      if (!cur) {
        throw MergeError("block " + std::to_string(block.block_id) +
                         ": batch norm '" + id + "' has no preceding conv");
      }
      cur->conv = fold_bn_into_conv(cur->conv, *bn);
    } else if (!std::holds_alternative<ActivationLayer>(layer) || !cur) {
      throw MergeError("block " + std::to_string(block.block_id) + ": node '" +
                       id + "' (" + op_name(layer) + ") is not mergeable here");
    }
    cur->provenance.push_back(id);
  }
  if (!cur) {
    throw MergeError("block " + std::to_string(block.block_id) + " is empty");
  }
  if (block.has_residual) {
    cur->conv = absorb_residual(cur->conv);
    cur->provenance.push_back(block.node_ids.back());
  }
  cur->free_activation = options.free_activation;
  return *std::move(cur);
}

// --- shrink -----------------------------------------------------------------

bool ShrinkReport::all_boundary_exact() const {
  return std::all_of(blocks.begin(), blocks.end(),
                     [](const BlockShrink& b) { return b.boundary_exact; });
}

int ShrinkReport::border() const {
  int border = 0;
  for (const BlockShrink& b : blocks) {
    if (b.merged && !b.boundary_exact) border = std::max(border, (b.kernel) / 2);
  }
  return border;
}

std::string shrink_report_to_json(const ShrinkReport& report) {
  using nlohmann::json;
  json blocks = json::array();
  for (const BlockShrink& b : report.blocks) {
    blocks.push_back({{"block_id", b.block_id},
                      {"merged", b.merged},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"c_in", b.c_in},
                      {"c_out", b.c_out},
                      {"flops_before", b.flops_before},
                      {"flops_after", b.flops_after},
                      {"boundary_exact", b.boundary_exact},
                      {"provenance", b.provenance}});
  }
  json doc = {{"blocks", blocks},
              {"all_boundary_exact", report.all_boundary_exact()},
              {"border", report.border()}};
  return doc.dump(1) + "\n";
}

namespace {

bool contains_all(const BlockAnnotation& outer, const BlockAnnotation& inner) {
  const std::set<std::string> ids(outer.node_ids.begin(), outer.node_ids.end());
  return std::all_of(inner.node_ids.begin(), inner.node_ids.end(),
                     [&](const auto& id) { return ids.count(id) > 0; });
}

std::string unique_id(const NetGraph& graph, const std::string& base) {
  std::string id = base;
  for (int k = 1; graph.find(id) != nullptr; ++k) id = base + std::to_string(k);
  return id;
}

}  // namespace

ShrinkResult shrink_graph(const NetGraph& graph, std::span<const int> mask,
                          const ShrinkOptions& options) {
  const ShapeTable shapes = validate_graph(graph);
  if (mask.size() != graph.blocks.size()) {
    throw ValidationError("mask has " + std::to_string(mask.size()) +
                          " entries but graph has " +
                          std::to_string(graph.blocks.size()) + " blocks");
  }
  const std::size_t count = graph.blocks.size();

  // A block to merge inside another block to merge is covered by it.
  std::vector<bool> merge(count, false);
  std::vector<int> covered_by(count, -1);
  std::vector<int> enclosing(count, -1);  // innermost enclosing block
  for (std::size_t b = 0; b < count; ++b) merge[b] = mask[b] == 0;
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t o = 0; o < count; ++o) {
      if (o == b || graph.blocks[o].node_ids.size() <= graph.blocks[b].node_ids.size() ||
          !contains_all(graph.blocks[o], graph.blocks[b])) {
        continue;
      }
      if (enclosing[b] < 0 || graph.blocks[o].node_ids.size() <
                                  graph.blocks[enclosing[b]].node_ids.size()) {
        enclosing[b] = static_cast<int>(o);
      }
      if (merge[o] && merge[b]) covered_by[b] = static_cast<int>(o);
    }
  }

  ShrinkResult result;
  NetGraph& out = result.graph;
  out.input_dims = graph.input_dims;
  out.metadata = graph.metadata;

  std::map<std::string, std::size_t> first_of;     // first node -> block
  std::map<std::string, std::size_t> member_of;    // node -> merged block
  std::map<std::string, std::string> replacement;  // exit id -> new tail id
  std::map<std::size_t, MergedConv> merged;
  std::map<std::size_t, std::string> merged_id;
  for (std::size_t b = 0; b < count; ++b) {
    if (!merge[b] || covered_by[b] >= 0) continue;
    const BlockAnnotation& block = graph.blocks[b];
    merged.emplace(b, merge_block(graph, block));
    for (const std::string& id : block.node_ids) member_of[id] = b;
    first_of[block.node_ids.front()] = b;
  }

  // Nodes.
  for (const Node& n : graph.nodes) {
    auto member = member_of.find(n.id);
    if (member == member_of.end()) {
      out.nodes.push_back(n);
      continue;
    }
    const std::size_t b = member->second;
    if (first_of.count(n.id) == 0 || first_of.at(n.id) != b) continue;
    const BlockAnnotation& block = graph.blocks[b];
    const std::string id = unique_id(graph, block.node_ids.front() + ".merged");
    merged_id[b] = id;
    out.nodes.push_back(Node{id, merged.at(b).conv, {block_entry(graph, block)}});
    std::string tail = id;
    const bool top_level = enclosing[b] < 0 || merge[enclosing[b]];
    if (options.free_activation && top_level) {
      tail = unique_id(graph, id + ".free_act");
      out.nodes.push_back(Node{tail, ActivationLayer{*options.free_activation}, {id}});
      merged.at(b).free_activation = options.free_activation;
    }
    replacement[block_exit(block)] = tail;
  }
  for (Node& n : out.nodes) {
    for (std::string& in : n.inputs) {
      auto it = replacement.find(in);
      if (it != replacement.end()) in = it->second;
    }
  }

  // Blocks and report.
  for (std::size_t b = 0; b < count; ++b) {
    const BlockAnnotation& block = graph.blocks[b];
    const Shape& in = shapes.at(block_entry(graph, block));
    const Shape& exit = shapes.at(block_exit(block));
    std::int64_t flops_before = 0;
    for (const std::string& id : block.node_ids) {
      flops_before += layer_macs(graph.node(id).layer, shapes.at(id));
    }
    BlockShrink entry;
    entry.block_id = block.block_id;
    entry.c_in = in[1];
    entry.c_out = exit[1];
    entry.flops_before = flops_before;

    if (covered_by[b] >= 0) {
      const MergedConv& m = merged.at(static_cast<std::size_t>(covered_by[b]));
      entry.merged = true;
      entry.kernel = m.conv.kernel;
      entry.stride = m.conv.stride;
      entry.boundary_exact = m.boundary_exact;
      entry.flops_after = 0;
      entry.provenance = block.node_ids;
      result.report.blocks.push_back(entry);
      continue;
    }
    if (merged.count(b)) {
      const MergedConv& m = merged.at(b);
      entry.merged = true;
      entry.kernel = m.conv.kernel;
      entry.stride = m.conv.stride;
      entry.boundary_exact = m.boundary_exact;
      entry.flops_after = conv_macs(m.conv, exit[2], exit[3]);
      entry.provenance = m.provenance;
      BlockAnnotation plain;
      plain.kind = BlockKind::kPlainConv;
      plain.node_ids = {merged_id.at(b)};
      plain.expand_ratio = 1.0;
      plain.dw_kernel = m.conv.kernel;
      plain.stride = m.conv.stride;
      out.blocks.push_back(plain);
      result.mask.push_back(0);
    } else {
      entry.kernel = block.dw_kernel;
      entry.stride = block.stride;
      entry.flops_after = flops_before;
      BlockAnnotation kept = block;
      // Collapse spans of merged nested blocks to their merged node.
      std::vector<std::string> ids;
      for (const std::string& id : block.node_ids) {
        auto member = member_of.find(id);
        if (member == member_of.end()) {
          ids.push_back(id);
        } else if (graph.blocks[member->second].node_ids.front() == id) {
          ids.push_back(merged_id.at(member->second));
        }
      }
      kept.node_ids = std::move(ids);
      out.blocks.push_back(kept);
      result.mask.push_back(mask[b]);
    }
    result.report.blocks.push_back(entry);
  }
  for (std::size_t i = 0; i < out.blocks.size(); ++i) {
    out.blocks[i].block_id = static_cast<int>(i);
  }

  bool exact = result.report.all_boundary_exact();
  int border = result.report.border();
  if (auto it = graph.metadata.find("shrink.boundary_exact"); it != graph.metadata.end()) {
    exact = exact && it->second == "true";
  }
  if (auto it = graph.metadata.find("shrink.border"); it != graph.metadata.end()) {
    border = std::max(border, std::stoi(it->second));
  }
  out.metadata["shrink.boundary_exact"] = exact ? "true" : "false";
  out.metadata["shrink.border"] = std::to_string(border);
  validate_graph(out);
  return result;
}

// --- verification -------------------------------------------------------------

EquivalenceReport verify_equivalence(const NetGraph& before,
                                     const NetGraph& after,
                                     const VerifyOptions& options) {
  if (before.input_dims != after.input_dims) {
    throw ShapeError("graphs disagree on input dims: " +
                     to_string(before.input_dims) + " vs " +
                     to_string(after.input_dims));
  }
  if (options.n_samples <= 0) throw Error("n_samples must be positive");
  EquivalenceReport report;
  report.n_samples = options.n_samples;
  report.tol = options.tol;
  if (options.border) {
    report.border = *options.border;
  } else if (auto it = after.metadata.find("shrink.border"); it != after.metadata.end()) {
    report.border = std::stoi(it->second);
  }
  if (options.boundary_exact) {
    report.boundary_exact = *options.boundary_exact;
  } else if (auto it = after.metadata.find("shrink.boundary_exact");
             it != after.metadata.end()) {
    report.boundary_exact = it->second == "true";
  }

  const ExecOptions exec{options.precision, true};
  Rng rng(options.seed);
  Shape dims = before.input_dims;
  dims[0] = 1;
  double max_ref = 0.0;
  bool finite = true;
  for (int s = 0; s < options.n_samples; ++s) {
    std::vector<double> data(static_cast<std::size_t>(num_elements(dims)));
    for (double& v : data) v = rng.normal();
    const Tensor x(dims, std::move(data));
    const Tensor ya = execute_graph(before, x, exec);
    const Tensor yb = execute_graph(after, x, exec);
    if (ya.shape() != yb.shape()) {
      throw ShapeError("graphs produce different output shapes: " +
                       to_string(ya.shape()) + " vs " + to_string(yb.shape()));
    }
    const int b = report.border;
    for (int c = 0; c < ya.c(); ++c) {
      for (int h = 0; h < ya.h(); ++h) {
        for (int w = 0; w < ya.w(); ++w) {
          const double ref = ya.at(0, c, h, w);
          const double err = std::abs(ref - yb.at(0, c, h, w));
          if (!std::isfinite(err)) finite = false;
          max_ref = std::max(max_ref, std::abs(ref));
          report.max_abs_err = std::max(report.max_abs_err, err);
          const bool interior =
              h >= b && h < ya.h() - b && w >= b && w < ya.w() - b;
          if (interior) {
            report.interior_max_abs_err =
                std::max(report.interior_max_abs_err, err);
          }
        }
      }
    }
  }
  report.max_rel_err = max_ref > 0.0 ? report.max_abs_err / max_ref : report.max_abs_err;
  report.pass = finite && report.interior_max_abs_err <= options.tol &&
                (!report.boundary_exact || report.max_abs_err <= options.tol);
  return report;
}

std::string equivalence_report_to_json(const EquivalenceReport& report) {
  nlohmann::json doc = {{"n_samples", report.n_samples},
                        {"max_abs_err", report.max_abs_err},
                        {"max_rel_err", report.max_rel_err},
                        {"interior_max_abs_err", report.interior_max_abs_err},
                        {"border", report.border},
                        {"boundary_exact", report.boundary_exact},
                        {"tol", report.tol},
                        {"pass", report.pass}};
  return doc.dump(1) + "\n";
}

}  // namespace blockfuse
