// Copyright 2026 The Partime Authors
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

// Model files are line-oriented text:
//
//   partime-model 1
//   numeric f64
//   seed 42
//   input 3 32 32
//   loss mse
//   layer conv2d in_channels=3 out_channels=8 kernel=3 init_seed=...
//   layer relu init_seed=...
//   layer residual_add source=0 init_seed=...
//   weights net.model.weights
//
// `#` starts a comment. The optional `weights` line names a sidecar binary
// (resolved relative to the spec file). Without it, weights are drawn from
// each layer's init_seed. Sidecar layout, all little-endian:
//
//   char[4] "PTWB" | u32 version=1 | u32 scalar_bytes (4|8) | u32 layer_count
//   layer_count x { u64 offset_in_scalars, u64 scalar_count }
//   payload: per layer, weight then bias, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "partime/error.hpp"
#include "partime/model.hpp"

namespace partime {

namespace io_detail {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw ParseError("weights file truncated reading " + what);
  return v;
}
inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw ParseError("weights file truncated reading " + what);
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::uint64_t parse_uint(const std::string& s, std::size_t line, const std::string& field) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size() || (!s.empty() && s[0] == '-')) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": field '" + field + "' expects an unsigned integer, got '" +
                     s + "'");
  }
}

inline std::string layer_line(const LayerSpec& s) {
  std::ostringstream os;
  os << "layer " << layer_kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::kDense: os << " in=" << s.in_dim << " out=" << s.out_dim; break;
    case LayerKind::kConv2d:
      os << " in_channels=" << s.in_channels << " out_channels=" << s.out_channels << " kernel=" << s.kernel;
      break;
    case LayerKind::kAvgPool2d: os << " window=" << s.window; break;
    case LayerKind::kResidualAdd: os << " source=" << s.source; break;
    default: break;
  }
  os << " init_seed=" << s.init_seed;
  return os.str();
}

// Returns the spec and whether init_seed was given explicitly.
inline std::pair<LayerSpec, bool> parse_layer(const std::vector<std::string>& toks, std::size_t line) {
  if (toks.size() < 2) throw ParseError("line " + std::to_string(line) + ": layer needs a kind");
  LayerSpec s;
  try {
    s.kind = parse_layer_kind(toks[1]);
  } catch (const ParseError& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what());
  }
  std::map<std::string, std::string> kv;
  for (std::size_t i = 2; i < toks.size(); ++i) {
    const auto eq = toks[i].find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line) + ": expected key=value, got '" + toks[i] + "'");
    }
    kv[toks[i].substr(0, eq)] = toks[i].substr(eq + 1);
  }
  auto take = [&](const std::string& key, bool required) -> std::uint64_t {
    auto it = kv.find(key);
    if (it == kv.end()) {
      if (required) throw ParseError("line " + std::to_string(line) + ": missing field '" + key + "'");
      return 0;
    }
    const std::uint64_t v = parse_uint(it->second, line, key);
    kv.erase(it);
    return v;
  };
  switch (s.kind) {
    case LayerKind::kDense:
      s.in_dim = take("in", true);
      s.out_dim = take("out", true);
      break;
    case LayerKind::kConv2d:
      s.in_channels = take("in_channels", true);
      s.out_channels = take("out_channels", true);
      s.kernel = take("kernel", true);
      break;
    case LayerKind::kAvgPool2d: s.window = take("window", true); break;
    case LayerKind::kResidualAdd: s.source = static_cast<int>(take("source", true)); break;
    default: break;
  }
  const bool seeded = kv.count("init_seed") > 0;
  s.init_seed = take("init_seed", false);
  if (!kv.empty()) {
    throw ParseError("line " + std::to_string(line) + ": unknown field '" + kv.begin()->first + "' for " +
                     layer_kind_name(s.kind));
  }
  return {s, seeded};
}

}  // namespace io_detail

struct ModelFileInfo {
  NumericMode numeric = NumericMode::kF64;
  std::string weights_file;  // empty when the file has no weights line
};

inline std::string weights_sidecar_name(const std::filesystem::path& spec_path) {
  return spec_path.filename().string() + ".weights";
}

// Writes the spec to `path` and the weights to the sidecar next to it.
template <typename T>
void model_save(const Model<T>& model, const std::filesystem::path& path) {
  const std::string sidecar = weights_sidecar_name(path);
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << "partime-model 1\n";
    os << "numeric " << numeric_mode_name(numeric_mode_of<T>()) << "\n";
    os << "seed " << model.seed << "\n";
    os << "input";
    for (std::size_t d : model.input_shape) os << ' ' << d;
    os << "\n";
    os << "loss " << loss_kind_name(model.loss) << "\n";
    for (const auto& l : model.layers) os << io_detail::layer_line(l.spec) << "\n";
    os << "weights " << sidecar << "\n";
  }
  std::ofstream ws(path.parent_path() / sidecar, std::ios::binary);
  if (!ws) throw Error("cannot write weights sidecar " + sidecar);
  ws.write("PTWB", 4);
  io_detail::put_u32(ws, 1);
  io_detail::put_u32(ws, sizeof(T));
  io_detail::put_u32(ws, static_cast<std::uint32_t>(model.layers.size()));
  std::uint64_t offset = 0;
  for (const auto& l : model.layers) {
    std::uint64_t count = 0;
    for (const auto& w : l.weights) count += w.size();
    io_detail::put_u64(ws, offset);
    io_detail::put_u64(ws, count);
    offset += count;
  }
  for (const auto& l : model.layers) {
    for (const auto& w : l.weights) ws.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.bytes()));
  }
}

namespace io_detail {

template <typename T, typename S>
void read_payload(std::istream& is, Model<T>& model, const std::vector<std::uint64_t>& counts) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    std::vector<Tensor<T>> ws;
    for (const Shape& shape : param_shapes(layer.spec)) {
      Tensor<T> t(shape);
      std::vector<S> buf(t.size());
      if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(S)))) {
        throw ParseError("weights file truncated inside " + layer_label(layer.spec, i));
      }
      for (std::size_t k = 0; k < buf.size(); ++k) t[k] = static_cast<T>(buf[k]);
      ws.push_back(std::move(t));
    }
    (void)counts;
    layer.weights = std::move(ws);
  }
}

template <typename T>
void load_weights(const std::filesystem::path& path, Model<T>& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open weights file " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PTWB", 4) != 0) {
    throw ParseError(path.string() + ": bad magic, not a weights file");
  }
  const std::uint32_t version = get_u32(is, "version");
  if (version != 1) throw ParseError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t scalar = get_u32(is, "scalar_bytes");
  if (scalar != 4 && scalar != 8) throw ParseError(path.string() + ": scalar_bytes must be 4 or 8");
  const std::uint32_t n = get_u32(is, "layer_count");
  if (n != model.layers.size()) {
    throw ParseError(path.string() + ": holds " + std::to_string(n) + " layers, spec declares " +
                     std::to_string(model.layers.size()));
  }
  std::vector<std::uint64_t> counts(n);
  std::uint64_t expected_offset = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint64_t off = get_u64(is, "offset of layer " + std::to_string(i));
    counts[i] = get_u64(is, "count of layer " + std::to_string(i));
    std::uint64_t want = 0;
    for (const Shape& s : param_shapes(model.layers[i].spec)) want += shape_numel(s);
    if (counts[i] != want || off != expected_offset) {
      throw ParseError(path.string() + ": " + layer_label(model.layers[i].spec, i) + " expects " +
                       std::to_string(want) + " weights at offset " + std::to_string(expected_offset) +
                       ", file has " + std::to_string(counts[i]) + " at offset " + std::to_string(off));
    }
    expected_offset += counts[i];
  }
  if (scalar == 8) read_payload<T, double>(is, model, counts);
  else read_payload<T, float>(is, model, counts);
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes after payload");
}

}  // namespace io_detail

// Parses a model spec (and its sidecar weights, if named). Weights stored in
// the other numeric mode are converted to T.
template <typename T>
Model<T> model_load(const std::filesystem::path& path, ModelFileInfo* info = nullptr) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open model file " + path.string());
  Model<T> model;
  ModelFileInfo meta;
  std::vector<LayerSpec> specs;
  std::vector<bool> seeded;
  bool have_header = false, have_input = false, have_loss = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto toks = io_detail::split_ws(line);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    auto need = [&](std::size_t n) {
      if (toks.size() != n) {
        throw ParseError("line " + std::to_string(lineno) + ": field '" + key + "' expects " +
                         std::to_string(n - 1) + " value(s)");
      }
    };
    if (!have_header) {
      if (key != "partime-model" || toks.size() != 2 || toks[1] != "1") {
        throw ParseError("line " + std::to_string(lineno) + ": expected header 'partime-model 1'");
      }
      have_header = true;
    } else if (key == "numeric") {
      need(2);
      try {
        meta.numeric = parse_numeric_mode(toks[1]);
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
      }
    } else if (key == "seed") {
      need(2);
      model.seed = io_detail::parse_uint(toks[1], lineno, "seed");
    } else if (key == "input") {
      if (toks.size() < 2) throw ParseError("line " + std::to_string(lineno) + ": field 'input' needs dimensions");
      for (std::size_t i = 1; i < toks.size(); ++i) {
        const auto d = io_detail::parse_uint(toks[i], lineno, "input");
        if (d == 0) throw ParseError("line " + std::to_string(lineno) + ": field 'input' has a zero dimension");
        model.input_shape.push_back(d);
      }
      have_input = true;
    } else if (key == "loss") {
      need(2);
      try {
        model.loss = parse_loss_kind(toks[1]);
      } catch (const ParseError& e) {
        throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
      }
      have_loss = true;
    } else if (key == "layer") {
      auto [spec, has_seed] = io_detail::parse_layer(toks, lineno);
      specs.push_back(spec);
      seeded.push_back(has_seed);
    } else if (key == "weights") {
      need(2);
      meta.weights_file = toks[1];
    } else {
      throw ParseError("line " + std::to_string(lineno) + ": unknown field '" + key + "'");
    }
  }
  if (!have_header) throw ParseError(path.string() + ": empty model file");
  if (!have_input) throw ParseError(path.string() + ": missing field 'input'");
  if (!have_loss) throw ParseError(path.string() + ": missing field 'loss'");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!seeded[i]) specs[i].init_seed = mix_seed(model.seed, i);
  }
  try {
    infer_shapes(specs, model.input_shape);
  } catch (const ShapeError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  for (const auto& s : specs) model.layers.push_back(Layer<T>{s, {}});
  model.weight_versions.assign(specs.size(), 0);
  if (meta.weights_file.empty()) {
    for (auto& l : model.layers) l.weights = init_weights<T>(l.spec);
  } else {
    io_detail::load_weights(path.parent_path() / meta.weights_file, model);
  }
  if (info) *info = meta;
  return model;
}

}  // namespace partime
