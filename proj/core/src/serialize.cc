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

#include "blockfuse/serialize.h"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "blockfuse/errors.h"

namespace blockfuse {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

// --- graph JSON ------------------------------------------------------------

namespace {

/// Cursor into a JSON document that remembers its path for error messages.
class JsonAt {
 public:
  JsonAt(const json& value, std::string path)
      : value_(value), path_(std::move(path)) {}

  const json& value() const { return value_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError((path_.empty() ? "/" : path_) + ": " + msg);
  }

  JsonAt operator[](const char* key) const {
    if (!value_.is_object()) fail("expected object");
    auto it = value_.find(key);
    if (it == value_.end()) fail(std::string("missing key '") + key + "'");
    return JsonAt(*it, path_ + "/" + key);
  }
  JsonAt operator[](std::size_t i) const {
    return JsonAt(value_.at(i), path_ + "/" + std::to_string(i));
  }
  bool has(const char* key) const {
    return value_.is_object() && value_.contains(key);
  }

  std::size_t array_size() const {
    if (!value_.is_array()) fail("expected array");
    return value_.size();
  }
  int as_int() const {
    if (!value_.is_number_integer()) fail("expected integer");
    const auto v = value_.get<std::int64_t>();
    if (v < INT32_MIN || v > INT32_MAX) fail("integer out of range");
    return static_cast<int>(v);
  }
  int as_positive() const {
    const int v = as_int();
    if (v <= 0) fail("expected positive integer");
    return v;
  }
  double as_double() const {
    if (!value_.is_number()) fail("expected number");
    return value_.get<double>();
  }
  bool as_bool() const {
    if (!value_.is_boolean()) fail("expected boolean");
    return value_.get<bool>();
  }
  std::string as_string() const {
    if (!value_.is_string()) fail("expected string");
    return value_.get<std::string>();
  }
  std::vector<std::string> as_strings() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < array_size(); ++i) {
      out.push_back((*this)[i].as_string());
    }
    return out;
  }

 private:
  const json& value_;
  std::string path_;
};

json layer_params(const Layer& layer) {
  json p = json::object();
  if (const auto* c = std::get_if<ConvLayer>(&layer)) {
    p = {{"c_in", c->c_in},     {"c_out", c->c_out},     {"kernel", c->kernel},
         {"stride", c->stride}, {"padding", c->padding}, {"groups", c->groups},
         {"bias", c->has_bias()}};
  } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
    p = {{"channels", bn->channels()}, {"eps", bn->epsilon}};
  } else if (const auto* a = std::get_if<ActivationLayer>(&layer)) {
    p = {{"kind", activation_name(a->kind)}};
  } else if (const auto* pool = std::get_if<AvgPoolLayer>(&layer)) {
    p = {{"kernel", pool->kernel}, {"stride", pool->stride}};
  } else if (const auto* fc = std::get_if<LinearLayer>(&layer)) {
    p = {{"in", fc->in}, {"out", fc->out}, {"bias", fc->has_bias()}};
  }
  return p;
}

Layer parse_layer(const std::string& op, const JsonAt& params) {
  if (!params.value().is_object()) params.fail("expected object");
  if (op == "conv") {
    ConvLayer c;
    c.c_in = params["c_in"].as_positive();
    c.c_out = params["c_out"].as_positive();
    c.kernel = params["kernel"].as_positive();
    c.stride = params["stride"].as_positive();
    c.padding = params["padding"].as_int();
    c.groups = params["groups"].as_positive();
    const bool bias = params["bias"].as_bool();
    try {
      return ConvLayer::make(c.c_in, c.c_out, c.kernel, c.stride, c.padding,
                             c.groups, bias);
    } catch (const ShapeError& e) {
      params.fail(e.what());
    }
  }
  if (op == "bn") {
    const int channels = params["channels"].as_positive();
    const double eps = params["eps"].as_double();
    if (!(eps > 0.0)) params["eps"].fail("expected positive epsilon");
    return BatchNormLayer::identity(channels, eps);
  }
  if (op == "act") {
    try {
      return ActivationLayer{parse_activation(params["kind"].as_string())};
    } catch (const ParseError& e) {
      params["kind"].fail(e.what());
    }
  }
  if (op == "avgpool") {
    return AvgPoolLayer{params["kernel"].as_positive(),
                        params["stride"].as_positive()};
  }
  if (op == "linear") {
    return LinearLayer::make(params["in"].as_positive(),
                             params["out"].as_positive(),
                             params["bias"].as_bool());
  }
  if (op == "add") return AddLayer{};
  if (op == "flatten") return FlattenLayer{};
  params.fail("unknown op '" + op + "'");
}

}  // namespace

std::string graph_to_json(const NetGraph& graph) {
  json nodes = json::array();
  for (const Node& n : graph.nodes) {
    nodes.push_back({{"id", n.id},
                     {"op", op_name(n.layer)},
                     {"params", layer_params(n.layer)},
                     {"inputs", n.inputs}});
  }
  json blocks = json::array();
  for (const BlockAnnotation& b : graph.blocks) {
    blocks.push_back({{"block_id", b.block_id},
                      {"kind", block_kind_name(b.kind)},
                      {"node_ids", b.node_ids},
                      {"expand_ratio", b.expand_ratio},
                      {"dw_kernel", b.dw_kernel},
                      {"stride", b.stride},
                      {"has_residual", b.has_residual},
                      {"act_node_ids", b.act_node_ids}});
  }
  json doc = {{"version", 1},
              {"input_dims", graph.input_dims},
              {"nodes", nodes},
              {"blocks", blocks},
              {"metadata", graph.metadata}};
  return doc.dump(1) + "\n";
}

NetGraph graph_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("/: malformed JSON: ") + e.what());
  }
  const JsonAt root(doc, "");
  if (!doc.is_object()) root.fail("expected object");
  if (root["version"].as_int() != 1) root["version"].fail("unsupported version");

  NetGraph graph;
  const JsonAt dims = root["input_dims"];
  if (dims.array_size() != 4) dims.fail("expected 4 dims [n,c,h,w]");
  for (std::size_t i = 0; i < 4; ++i) graph.input_dims[i] = dims[i].as_positive();

  const JsonAt nodes = root["nodes"];
  for (std::size_t i = 0; i < nodes.array_size(); ++i) {
    const JsonAt n = nodes[i];
    Node node;
    node.id = n["id"].as_string();
    node.layer = parse_layer(n["op"].as_string(), n["params"]);
    node.inputs = n["inputs"].as_strings();
    graph.nodes.push_back(std::move(node));
  }

  const JsonAt blocks = root["blocks"];
  for (std::size_t i = 0; i < blocks.array_size(); ++i) {
    const JsonAt b = blocks[i];
    BlockAnnotation block;
    block.block_id = b["block_id"].as_int();
    try {
      block.kind = parse_block_kind(b["kind"].as_string());
    } catch (const ParseError& e) {
      b["kind"].fail(e.what());
    }
    block.node_ids = b["node_ids"].as_strings();
    block.expand_ratio = b["expand_ratio"].as_double();
    block.dw_kernel = b["dw_kernel"].as_int();
    block.stride = b["stride"].as_int();
    block.has_residual = b["has_residual"].as_bool();
    block.act_node_ids = b["act_node_ids"].as_strings();
    graph.blocks.push_back(std::move(block));
  }

  if (root.has("metadata")) {
    const JsonAt meta = root["metadata"];
    if (!meta.value().is_object()) meta.fail("expected object");
    for (const auto& [key, value] : meta.value().items()) {
      if (!value.is_string()) {
        JsonAt(value, meta.path() + "/" + key).fail("expected string");
      }
      graph.metadata[key] = value.get<std::string>();
    }
  }
  validate_graph(graph);
  return graph;
}

void save_graph(const NetGraph& graph, const std::filesystem::path& path) {
  write_file(path, graph_to_json(graph));
}

NetGraph load_graph(const std::filesystem::path& path) {
  return graph_from_json(read_file(path));
}

// --- weights container -----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'S', 'W', 'T'};
constexpr std::uint32_t kWeightsVersion = 1;

template <class T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits = static_cast<U>(bits >> 8);
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::make_unsigned_t<T>>(
                  static_cast<unsigned char>(bytes_[pos_ + i]))
              << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(bits);
  }
  std::string_view take(std::size_t count, const char* what) {
    need(count, what);
    auto view = bytes_.substr(pos_, count);
    pos_ += count;
    return view;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t count, const char* what) const {
    if (bytes_.size() - pos_ < count) {
      throw FormatError(std::string("truncated weights file while reading ") +
                        what + " at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint32_t>& dims) {
  std::uint64_t count = 1;
  for (std::uint32_t d : dims) count *= d;
  return count;
}

}  // namespace

void WeightTable::add(NamedArray array) {
  if (find(array.name) != nullptr) {
    throw FormatError("duplicate array name '" + array.name + "'");
  }
  if (element_count(array.dims) != array.values.size()) {
    throw FormatError("array '" + array.name + "' dims do not match its " +
                      std::to_string(array.values.size()) + " values");
  }
  if (array.dtype == DType::kF32) {
    for (double& v : array.values) v = static_cast<double>(static_cast<float>(v));
  }
  arrays_.push_back(std::move(array));
}

const NamedArray* WeightTable::find(const std::string& name) const {
  for (const NamedArray& a : arrays_) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::string encode_weights(const WeightTable& table) {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kWeightsVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  for (const NamedArray& a : table.arrays()) {
    if (a.name.size() > UINT16_MAX) {
      throw FormatError("array name too long: '" + a.name + "'");
    }
    if (a.dims.size() > UINT8_MAX) {
      throw FormatError("array '" + a.name + "' has too many dims");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.dtype));
    out.push_back(static_cast<char>(a.dims.size()));
    for (std::uint32_t d : a.dims) put_le<std::uint32_t>(out, d);
    for (double v : a.values) {
      if (a.dtype == DType::kF32) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

WeightTable decode_weights(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.take(4, "magic") != std::string_view(kMagic, 4)) {
    throw FormatError("bad magic: not a DSWT weights file");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weights version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>("array count");
  WeightTable table;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = in.get<std::uint16_t>("name length");
    a.name = std::string(in.take(name_len, "name"));
    const auto dtype = in.get<std::uint8_t>("dtype");
    if (dtype > 1) {
      throw FormatError("array '" + a.name + "' has unknown dtype " +
                        std::to_string(dtype));
    }
    a.dtype = static_cast<DType>(dtype);
    const auto ndim = in.get<std::uint8_t>("ndim");
    for (int d = 0; d < ndim; ++d) a.dims.push_back(in.get<std::uint32_t>("dims"));
    const std::uint64_t n = element_count(a.dims);
    const std::size_t width = a.dtype == DType::kF32 ? 4 : 8;
    if (n > (bytes.size() - in.pos()) / width) {
      throw FormatError("truncated payload for array '" + a.name + "'");
    }
    a.values.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (a.dtype == DType::kF32) {
        a.values.push_back(std::bit_cast<float>(in.get<std::uint32_t>("payload")));
      } else {
        a.values.push_back(std::bit_cast<double>(in.get<std::uint64_t>("payload")));
      }
    }
    table.add(std::move(a));
  }
  if (!in.done()) {
    throw FormatError("trailing bytes after " + std::to_string(count) +
                      " arrays");
  }
  return table;
}

void save_weights(const WeightTable& table, const std::filesystem::path& path) {
  write_file(path, encode_weights(table));
}

WeightTable load_weights(const std::filesystem::path& path) {
  return decode_weights(read_file(path));
}

namespace {

std::vector<std::uint32_t> udims(std::initializer_list<int> dims) {
  std::vector<std::uint32_t> out;
  for (int d : dims) out.push_back(static_cast<std::uint32_t>(d));
  return out;
}

/// Visits every parameter array of the graph as (name, dims, storage).
template <class GraphT, class Fn>
void for_each_parameter(GraphT& graph, Fn&& fn) {
  for (auto& node : graph.nodes) {
    const std::string& id = node.id;
    if (auto* c = std::get_if<ConvLayer>(&node.layer)) {
      const Shape s = c->weight_shape();
      fn(id + ".weight", udims({s[0], s[1], s[2], s[3]}), c->weights.data());
      if (c->has_bias()) fn(id + ".bias", udims({c->c_out}), std::span(c->bias));
    } else if (auto* bn = std::get_if<BatchNormLayer>(&node.layer)) {
      const auto d = udims({bn->channels()});
      fn(id + ".gamma", d, std::span(bn->gamma));
      fn(id + ".beta", d, std::span(bn->beta));
      fn(id + ".running_mean", d, std::span(bn->running_mean));
      fn(id + ".running_var", d, std::span(bn->running_var));
    } else if (auto* fc = std::get_if<LinearLayer>(&node.layer)) {
      fn(id + ".weight", udims({fc->out, fc->in}), std::span(fc->weights));
      if (fc->has_bias()) fn(id + ".bias", udims({fc->out}), std::span(fc->bias));
    }
  }
}

}  // namespace

WeightTable extract_weights(const NetGraph& graph, DType dtype) {
  WeightTable table;
  for_each_parameter(graph, [&](const std::string& name,
                                std::vector<std::uint32_t> dims, auto values) {
    table.add(NamedArray{name, dtype, std::move(dims),
                         std::vector<double>(values.begin(), values.end())});
  });
  return table;
}

NetGraph bind_weights(const NetGraph& graph, const WeightTable& table) {
  NetGraph out = graph;
  std::set<std::string> used;
  for_each_parameter(out, [&](const std::string& name,
                              const std::vector<std::uint32_t>& dims,
                              std::span<double> values) {
    const NamedArray* a = table.find(name);
    if (a == nullptr) throw FormatError("weights file lacks array '" + name + "'");
    if (a->dims != dims) {
      throw FormatError("array '" + name + "' has mismatched dims");
    }
    std::copy(a->values.begin(), a->values.end(), values.begin());
    used.insert(name);
  });
  for (const NamedArray& a : table.arrays()) {
    if (!used.count(a.name)) {
      throw FormatError("array '" + a.name + "' matches no graph parameter");
    }
  }
  return out;
}

// --- mask / latency ----------------------------------------------------------

std::string mask_to_json(const std::vector<int>& mask) {
  return json(mask).dump() + "\n";
}

std::vector<int> mask_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("/: malformed JSON: ") + e.what());
  }
  const JsonAt root(doc, "");
  std::vector<int> mask;
  for (std::size_t i = 0; i < root.array_size(); ++i) {
    const int v = root[i].as_int();
    if (v != 0 && v != 1) root[i].fail("mask entries must be 0 or 1");
    mask.push_back(v);
  }
  return mask;
}

void save_mask(const std::vector<int>& mask, const std::filesystem::path& path) {
  write_file(path, mask_to_json(mask));
}

std::vector<int> load_mask(const std::filesystem::path& path) {
  return mask_from_json(read_file(path));
}

std::string latency_to_csv(const LatencyTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "block_id,latency_ms\n";
  for (const auto& [id, ms] : table.entries) os << id << "," << ms << "\n";
  return os.str();
}

LatencyTable latency_from_csv(std::string_view text) {
  LatencyTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != "block_id,latency_ms") {
        throw ParseError("latency CSV line 1: expected header 'block_id,latency_ms'");
      }
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    const auto bad = [&] {
      return ParseError("latency CSV line " + std::to_string(line_no) +
                        ": expected '<block_id>,<latency_ms>'");
    };
    if (comma == std::string::npos) throw bad();
    int id = 0;
    const std::string id_text = line.substr(0, comma);
    auto [p, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
    if (ec != std::errc() || p != id_text.data() + id_text.size()) throw bad();
    std::size_t used = 0;
    double ms = 0.0;
    try {
      ms = std::stod(line.substr(comma + 1), &used);
    } catch (const std::exception&) {
      throw bad();
    }
    if (used != line.size() - comma - 1) throw bad();
    table.entries.emplace_back(id, ms);
  }
  if (!header) throw ParseError("latency CSV is empty");
  return table;
}

void save_latency(const LatencyTable& table, const std::filesystem::path& path) {
  write_file(path, latency_to_csv(table));
}

LatencyTable load_latency(const std::filesystem::path& path) {
  return latency_from_csv(read_file(path));
}

}  // namespace blockfuse
