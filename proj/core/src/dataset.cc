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

#include "blockfuse/dataset.h"

#include <algorithm>
#include <cmath>

#include "blockfuse/errors.h"
#include "blockfuse/rng.h"
#include "blockfuse/serialize.h"

namespace blockfuse {

Shape Dataset::sample_dims() const {
  if (samples.empty()) throw TrainError("dataset is empty");
  return samples.front().x.shape();
}

Dataset make_two_class_dataset(int channels, int height, int width, int count,
                               std::uint64_t seed, double margin,
                               double noise) {
  if (channels < 1 || height < 1 || width < 1 || count < 1)
    throw ShapeError("dataset dims and count must be positive");
  Rng rng(seed);
  std::vector<double> t(channels);
  double norm = 0.0;
  for (double& v : t) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : t) v /= norm;
  const int hw = height * width;
  // Unit direction in sample space whose projection is the template
  // projection of the spatial mean, scaled by sqrt(hw).
  const double unit_scale = 1.0 / std::sqrt(double(hw));

  Dataset data;
  data.num_classes = 2;
  data.samples.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int label = i % 2;
    const double sign = label == 1 ? 1.0 : -1.0;
    const double amplitude = margin + 0.5 * std::abs(rng.normal());
    Tensor x({1, channels, height, width});
    double proj = 0.0;
    for (int c = 0; c < channels; ++c)
      for (int p = 0; p < hw; ++p) {
        const double n = rng.normal(0.0, noise);
        x.data()[c * hw + p] = n;
        proj += n * t[c] * unit_scale;
      }
    for (int c = 0; c < channels; ++c)
      for (int p = 0; p < hw; ++p)
        x.data()[c * hw + p] += -proj * t[c] * unit_scale + sign * amplitude * t[c];
    data.samples.push_back(Sample{std::move(x), label});
  }
  return data;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t at) {
  return (std::uint32_t(std::uint8_t(bytes[at])) << 24) |
         (std::uint32_t(std::uint8_t(bytes[at + 1])) << 16) |
         (std::uint32_t(std::uint8_t(bytes[at + 2])) << 8) |
         std::uint32_t(std::uint8_t(bytes[at + 3]));
}

std::vector<std::uint32_t> idx_header(const std::string& bytes, int want_dims,
                                      const std::string& what) {
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0)
    throw FormatError(what + ": not an IDX file");
  if (std::uint8_t(bytes[2]) != 0x08)
    throw FormatError(what + ": only unsigned byte IDX data is supported");
  const int dims = std::uint8_t(bytes[3]);
  if (dims != want_dims)
    throw FormatError(what + ": expected " + std::to_string(want_dims) +
                      " dims, found " + std::to_string(dims));
  if (bytes.size() < 4 + 4 * std::size_t(dims))
    throw FormatError(what + ": truncated header");
  std::vector<std::uint32_t> out;
  std::size_t expected = 1;
  for (int d = 0; d < dims; ++d) {
    out.push_back(read_be32(bytes, 4 + 4 * d));
    expected *= out.back();
  }
  if (bytes.size() != 4 + 4 * std::size_t(dims) + expected)
    throw FormatError(what + ": payload size does not match header");
  return out;
}

}  // namespace

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, int limit) {
  const std::string images = read_file(images_path);
  const std::string labels = read_file(labels_path);
  const auto idims = idx_header(images, 3, images_path);
  const auto ldims = idx_header(labels, 1, labels_path);
  if (idims[0] != ldims[0])
    throw FormatError("image and label counts differ (" +
                      std::to_string(idims[0]) + " vs " +
                      std::to_string(ldims[0]) + ")");
  std::size_t count = idims[0];
  if (limit > 0) count = std::min<std::size_t>(count, limit);
  const int rows = static_cast<int>(idims[1]);
  const int cols = static_cast<int>(idims[2]);
  const std::size_t pixels = std::size_t(rows) * cols;
  Dataset data;
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor x({1, 1, rows, cols});
    for (std::size_t p = 0; p < pixels; ++p)
      x.data()[p] = std::uint8_t(images[16 + i * pixels + p]) / 255.0;
    const int label = std::uint8_t(labels[8 + i]);
    max_label = std::max(max_label, label);
    data.samples.push_back(Sample{std::move(x), label});
  }
  data.num_classes = max_label + 1;
  return data;
}

Tensor make_batch(const Dataset& data, const std::vector<std::size_t>& order,
                  std::size_t first, std::size_t count,
                  std::vector<int>* labels) {
  const Shape one = data.sample_dims();
  const std::size_t per = one[1] * one[2] * one[3];
  Tensor batch({static_cast<int>(count), one[1], one[2], one[3]});
  if (labels) labels->clear();
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = data.samples.at(order.at(first + i));
    if (s.x.shape() != one)
      throw ShapeError("dataset samples have inconsistent dims");
    std::copy(s.x.data().begin(), s.x.data().end(),
              batch.data().begin() + i * per);
    if (labels) labels->push_back(s.label);
  }
  return batch;
}

}  // namespace blockfuse
