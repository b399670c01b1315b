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

#include "blockfuse/graph.h"
#include "blockfuse/kernels.h"

namespace blockfuse {

/// Evaluates the graph in topological order and returns the sink's value.
/// The graph is validated first; an invalid or cyclic graph raises an
/// IrError (ValidationError derives from it).
Tensor execute_graph(const NetGraph& graph, const Tensor& input,
                     const ExecOptions& options = {});

}  // namespace blockfuse
