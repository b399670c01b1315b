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

#include "blockfuse/cost.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "blockfuse/errors.h"
#include "blockfuse/kernels.h"

namespace blockfuse {

std::int64_t conv_macs(const ConvLayer& conv, int out_h, int out_w) {
  return static_cast<std::int64_t>(out_h) * out_w * conv.kernel * conv.kernel *
         (conv.c_in / conv.groups) * conv.c_out;
}

std::int64_t layer_macs(const Layer& layer, const Shape& out) {
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    return conv_macs(*conv, out[2], out[3]);
  }
  if (const auto* fc = std::get_if<LinearLayer>(&layer)) {
    return static_cast<std::int64_t>(fc->in) * fc->out;
  }
  return 0;
}

std::int64_t parameter_count(const Layer& layer) {
  if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
    return num_elements(conv->weight_shape()) +
           static_cast<std::int64_t>(conv->bias.size());
  }
  if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
    return 4 * static_cast<std::int64_t>(bn->channels());
  }
  if (const auto* fc = std::get_if<LinearLayer>(&layer)) {
    return static_cast<std::int64_t>(fc->in) * fc->out +
           static_cast<std::int64_t>(fc->bias.size());
  }
  return 0;
}

namespace {

std::int64_t sample_elements(const Shape& s) {
  return static_cast<std::int64_t>(s[1]) * s[2] * s[3];
}

}  // namespace

CostReport cost_report(const NetGraph& graph, int precision_bits,
                       const LatencyTable* latency) {
  if (precision_bits <= 0 || precision_bits % 8 != 0) {
    throw CostError("precision_bits must be a positive multiple of 8");
  }
  const ShapeTable shapes = validate_graph(graph);
  const std::int64_t bytes = precision_bits / 8;

  // Residual tensors held live by each node: the entry of every residual
  // block the node belongs to, unless the node reads that tensor itself.
  std::map<std::string, std::set<std::string>> live_residuals;
  for (const BlockAnnotation& b : graph.blocks) {
    if (!b.has_residual) continue;
    const std::string entry = block_entry(graph, b);
    for (const std::string& id : b.node_ids) live_residuals[id].insert(entry);
  }

  CostReport report;
  report.precision_bits = precision_bits;
  std::map<std::string, NodeCost> by_id;
  for (int idx : topological_order(graph)) {
    const Node& n = graph.nodes[idx];
    NodeCost cost;
    cost.node_id = n.id;
    cost.flops = layer_macs(n.layer, shapes.at(n.id));
    cost.weight_bytes = parameter_count(n.layer) * bytes;
    if (std::holds_alternative<ConvLayer>(n.layer) ||
        std::holds_alternative<LinearLayer>(n.layer)) {
      std::int64_t elements = sample_elements(shapes.at(n.id));
      for (const std::string& in : n.inputs) elements += sample_elements(shapes.at(in));
      for (const std::string& r : live_residuals[n.id]) {
        if (std::find(n.inputs.begin(), n.inputs.end(), r) == n.inputs.end()) {
          elements += sample_elements(shapes.at(r));
        }
      }
      cost.activation_bytes = elements * bytes;
    }
    report.total_flops += cost.flops;
    report.total_weight_bytes += cost.weight_bytes;
    report.peak_activation_bytes =
        std::max(report.peak_activation_bytes, cost.activation_bytes);
    by_id[n.id] = cost;
    report.nodes.push_back(cost);
  }

  std::vector<double> lambda;
  if (latency != nullptr) {
    check_latency_table(*latency, graph);
    report.total_latency_ms = 0.0;
  }
  for (const BlockAnnotation& b : graph.blocks) {
    BlockCost bc;
    bc.block_id = b.block_id;
    for (const std::string& id : b.node_ids) {
      const NodeCost& c = by_id.at(id);
      bc.flops += c.flops;
      bc.weight_bytes += c.weight_bytes;
      bc.peak_activation_bytes =
          std::max(bc.peak_activation_bytes, c.activation_bytes);
    }
    if (latency != nullptr) {
      bc.latency_ms = latency->find(b.block_id);
      *report.total_latency_ms += *bc.latency_ms;
    }
    report.blocks.push_back(bc);
  }
  return report;
}

CostReport flops_of_graph(const NetGraph& graph) {
  return cost_report(graph, 16, nullptr);
}

CostReport memory_footprint(const NetGraph& graph, int precision_bits) {
  return cost_report(graph, precision_bits, nullptr);
}

std::string cost_report_to_json(const CostReport& report) {
  using nlohmann::json;
  json blocks = json::array();
  for (const BlockCost& b : report.blocks) {
    json j = {{"block_id", b.block_id},
              {"flops", b.flops},
              {"weight_bytes", b.weight_bytes},
              {"peak_activation_bytes", b.peak_activation_bytes}};
    if (b.latency_ms) j["latency_ms"] = *b.latency_ms;
    blocks.push_back(j);
  }
  json nodes = json::array();
  for (const NodeCost& n : report.nodes) {
    nodes.push_back({{"node_id", n.node_id},
                     {"flops", n.flops},
                     {"weight_bytes", n.weight_bytes},
                     {"activation_bytes", n.activation_bytes}});
  }
  json doc = {{"precision_bits", report.precision_bits},
              {"total_flops", report.total_flops},
              {"total_weight_bytes", report.total_weight_bytes},
              {"peak_activation_bytes", report.peak_activation_bytes},
              {"blocks", blocks},
              {"nodes", nodes}};
  if (report.total_latency_ms) doc["total_latency_ms"] = *report.total_latency_ms;
  return doc.dump(1) + "\n";
}

std::string cost_report_to_text(const CostReport& report) {
  std::ostringstream os;
  const bool with_latency = report.total_latency_ms.has_value();
  os << std::left << std::setw(8) << "block" << std::right << std::setw(16)
     << "MFLOPs" << std::setw(16) << "weight_KiB" << std::setw(16)
     << "peak_act_KiB";
  if (with_latency) os << std::setw(14) << "latency_ms";
  os << "\n";
  auto row = [&](const std::string& name, std::int64_t flops,
                 std::int64_t weights, std::int64_t peak,
                 std::optional<double> latency) {
    os << std::left << std::setw(8) << name << std::right << std::fixed
       << std::setprecision(3) << std::setw(16) << flops / 1e6 << std::setw(16)
       << weights / 1024.0 << std::setw(16) << peak / 1024.0;
    if (with_latency) os << std::setw(14) << latency.value_or(0.0);
    os << "\n";
  };
  for (const BlockCost& b : report.blocks) {
    row(std::to_string(b.block_id), b.flops, b.weight_bytes,
        b.peak_activation_bytes, b.latency_ms);
  }
  row("total", report.total_flops, report.total_weight_bytes,
      report.peak_activation_bytes, report.total_latency_ms);
  os << "precision: " << report.precision_bits << "-bit\n";
  return os.str();
}

// --- FLOPs-matched dense replacement ----------------------------------------

int BlockGeometry::hidden() const {
  return static_cast<int>(std::lround(expand_ratio * c_in));
}

int BlockGeometry::out_h() const {
  return conv_out_size(in_h, kernel, stride, (kernel - 1) / 2);
}

int BlockGeometry::out_w() const {
  return conv_out_size(in_w, kernel, stride, (kernel - 1) / 2);
}

std::int64_t BlockGeometry::flops() const {
  const std::int64_t in_px = static_cast<std::int64_t>(in_h) * in_w;
  const std::int64_t out_px = static_cast<std::int64_t>(out_h()) * out_w();
  const std::int64_t e = hidden();
  return in_px * c_in * e + out_px * kernel * kernel * e + out_px * e * c_out;
}

double FlopsMatch::relative_error() const {
  return std::abs(static_cast<double>(achieved_flops - target_flops)) /
         static_cast<double>(target_flops);
}

namespace {

FlopsMatch match_dense(std::int64_t target, int c_in, int c_out, int kernel,
                       int stride, int out_h, int out_w) {
  if (target <= 0) throw CostError("cannot match a block with zero FLOPs");
  const std::int64_t per_channel_pair =
      static_cast<std::int64_t>(out_h) * out_w * kernel * kernel;
  const double base = static_cast<double>(per_channel_pair) * c_in * c_out;
  FlopsMatch m;
  m.alpha = std::sqrt(static_cast<double>(target) / base);
  m.target_flops = target;
  m.out_h = out_h;
  m.out_w = out_w;

  const bool in_narrow = c_in <= c_out;
  const int narrow = in_narrow ? c_in : c_out;
  const int narrow_scaled =
      std::max(1, static_cast<int>(std::lround(m.alpha * narrow)));
  const double wide_exact =
      static_cast<double>(target) / (static_cast<double>(per_channel_pair) * narrow_scaled);
  const int wide_scaled = std::max(1, static_cast<int>(std::lround(wide_exact)));
  const int new_in = in_narrow ? narrow_scaled : wide_scaled;
  const int new_out = in_narrow ? wide_scaled : narrow_scaled;

  m.conv = ConvLayer::make(new_in, new_out, kernel, stride, (kernel - 1) / 2);
  m.achieved_flops = conv_macs(m.conv, out_h, out_w);
  return m;
}

}  // namespace

FlopsMatch flops_matched_dense(const BlockGeometry& block) {
  return match_dense(block.flops(), block.c_in, block.c_out, block.kernel,
                     block.stride, block.out_h(), block.out_w());
}

FlopsMatch flops_matched_dense(const NetGraph& graph,
                               const BlockAnnotation& block) {
  const ShapeTable shapes = validate_graph(graph);
  const Shape& in = shapes.at(block_entry(graph, block));
  const Shape& out = shapes.at(block_exit(block));
  if (block.kind == BlockKind::kPlainConv) {
    const auto& conv = std::get<ConvLayer>(graph.node(block.node_ids.front()).layer);
    FlopsMatch m;
    m.conv = conv;
    m.alpha = 1.0;
    m.out_h = out[2];
    m.out_w = out[3];
    m.target_flops = m.achieved_flops = conv_macs(conv, out[2], out[3]);
    if (m.target_flops <= 0) throw CostError("cannot match a block with zero FLOPs");
    return m;
  }
  std::int64_t target = 0;
  for (const std::string& id : block.node_ids) {
    target += layer_macs(graph.node(id).layer, shapes.at(id));
  }
  return match_dense(target, in[1], out[1], block.dw_kernel, block.stride,
                     out[2], out[3]);
}

std::vector<double> latency_decay_weights(const LatencyTable& table,
                                          int num_blocks) {
  if (num_blocks <= 0) return {};
  std::vector<double> lambda(num_blocks, 0.0);
  std::vector<bool> seen(num_blocks, false);
  for (const auto& [id, ms] : table.entries) {
    if (id < 0 || id >= num_blocks) {
      throw ValidationError("latency entry for unknown block " + std::to_string(id));
    }
    if (!(ms > 0.0)) {
      throw ValidationError("latency of block " + std::to_string(id) +
                            " must be positive");
    }
    lambda[id] = ms;
    seen[id] = true;
  }
  for (int b = 0; b < num_blocks; ++b) {
    if (!seen[b]) {
      throw ValidationError("latency table is missing block " + std::to_string(b));
    }
  }
  const double max_ms = *std::max_element(lambda.begin(), lambda.end());
  for (double& l : lambda) l /= max_ms;
  return lambda;
}

}  // namespace blockfuse
