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
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "blockfuse/graph.h"

namespace blockfuse {

// Graph files ---------------------------------------------------------------
//
// UTF-8 JSON:
//   { "version": 1, "input_dims": [n,c,h,w],
//     "nodes": [{"id", "op", "params", "inputs"}...],
//     "blocks": [{block_id, kind, node_ids, expand_ratio, dw_kernel, stride,
//                 has_residual, act_node_ids}...],
//     "metadata": {string: string} }
//
// Parameter values are not part of the graph file; a loaded graph carries
// zero weights (identity batch norms) until weights are bound.

std::string graph_to_json(const NetGraph& graph);
/// Throws ParseError (with a JSON path) on schema violations and
/// ValidationError on IR invariant violations.
NetGraph graph_from_json(std::string_view text);

void save_graph(const NetGraph& graph, const std::filesystem::path& path);
NetGraph load_graph(const std::filesystem::path& path);

// Weights files -------------------------------------------------------------
//
// "DSWT", u32 version (=1), u32 array count, then per array:
// u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 ndim,
// ndim x u32 dims, raw payload. All integers and payloads little-endian,
// no padding.

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct NamedArray {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint32_t> dims;
  /// f32 arrays hold float-representable doubles.
  std::vector<double> values;
};

class WeightTable {
 public:
  /// Throws FormatError on a duplicate name or dims/values mismatch.
  void add(NamedArray array);
  const NamedArray* find(const std::string& name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }
  std::size_t size() const { return arrays_.size(); }

 private:
  std::vector<NamedArray> arrays_;
};

std::string encode_weights(const WeightTable& table);
/// Throws FormatError on bad magic, unsupported version or dtype, truncated
/// payload, trailing bytes, or duplicate names.
WeightTable decode_weights(std::string_view bytes);

void save_weights(const WeightTable& table, const std::filesystem::path& path);
WeightTable load_weights(const std::filesystem::path& path);

/// Arrays are named "<node>.weight", "<node>.bias" (conv, linear) and
/// "<node>.gamma", ".beta", ".running_mean", ".running_var" (bn).
WeightTable extract_weights(const NetGraph& graph, DType dtype = DType::kF64);
/// Copies every parameter of `graph` from the table. Missing or mis-shaped
/// arrays and arrays naming no parameter are FormatErrors.
NetGraph bind_weights(const NetGraph& graph, const WeightTable& table);

// Mask and latency files ----------------------------------------------------

/// JSON array of 0/1 integers.
std::string mask_to_json(const std::vector<int>& mask);
std::vector<int> mask_from_json(std::string_view text);
void save_mask(const std::vector<int>& mask, const std::filesystem::path& path);
std::vector<int> load_mask(const std::filesystem::path& path);

/// CSV with header "block_id,latency_ms".
std::string latency_to_csv(const LatencyTable& table);
LatencyTable latency_from_csv(std::string_view text);
void save_latency(const LatencyTable& table, const std::filesystem::path& path);
LatencyTable load_latency(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace blockfuse
