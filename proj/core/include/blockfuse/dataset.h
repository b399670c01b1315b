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

#include "blockfuse/tensor.h"

namespace blockfuse {

struct Sample {
  Tensor x;  // (1, c, h, w)
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;

  std::size_t size() const { return samples.size(); }
  Shape sample_dims() const;
};

/// Two classes separated by a channel-wise constant template: the projection
/// of a sample's spatial mean onto the unit template is +-(margin + |u|/2),
/// u ~ N(0, 1); the remaining noise (std `noise`) is orthogonal to it.
/// Labels alternate so both classes are balanced. The template is drawn from
/// `seed`, so train and test splits must come from one call.
Dataset make_two_class_dataset(int channels, int height, int width, int count,
                               std::uint64_t seed, double margin = 1.0,
                               double noise = 1.0);

/// Reads an IDX image file (ubyte, 3 dims) and IDX label file (ubyte,
/// 1 dim), scaling pixels to [0, 1]. `limit` > 0 keeps the first `limit`
/// samples. Throws FormatError on malformed files.
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int limit = 0);

/// Stacks samples[first .. first+count) of `order` into one batch tensor.
Tensor make_batch(const Dataset& data, const std::vector<std::size_t>& order,
                  std::size_t first, std::size_t count,
                  std::vector<int>* labels);

}  // namespace blockfuse
