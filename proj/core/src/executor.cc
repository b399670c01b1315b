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

#include "blockfuse/executor.h"

#include <unordered_map>

#include "blockfuse/errors.h"

namespace blockfuse {

Tensor execute_graph(const NetGraph& graph, const Tensor& input,
                     const ExecOptions& options) {
  validate_graph(graph);
  if (input.shape()[1] != graph.input_dims[1] ||
      input.shape()[2] != graph.input_dims[2] ||
      input.shape()[3] != graph.input_dims[3]) {
    throw ShapeError("graph input expects " + to_string(graph.input_dims) +
                     " (any batch), got " + to_string(input.shape()));
  }
  const std::vector<int> order = topological_order(graph);

  // Release intermediates once their last consumer has run.
  std::unordered_map<std::string, int> remaining;
  for (const Node& n : graph.nodes) {
    for (const std::string& in : n.inputs) ++remaining[in];
  }
  std::unordered_map<std::string, Tensor> values;
  values.emplace(kGraphInput, input.with_precision(options.precision));
  for (int idx : order) {
    const Node& n = graph.nodes[idx];
    std::vector<const Tensor*> args;
    for (const std::string& in : n.inputs) args.push_back(&values.at(in));
    Tensor out = execute_layer(n.layer, args, options);
    for (const std::string& in : n.inputs) {
      if (--remaining[in] == 0) values.erase(in);
    }
    values.insert_or_assign(n.id, std::move(out));
  }
  return std::move(values.at(sink_id(graph)));
}

}  // namespace blockfuse
