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

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "partime/engine.hpp"
#include "partime/error.hpp"
#include "partime/rng.hpp"
#include "partime/tensor.hpp"

namespace partime {

template <typename T>
struct Sample {
  Tensor<T> x;
  Tensor<T> target;
  std::int64_t id = 0;
};

enum class StreamKind { kConstant, kDrift2d, kReplay };

inline const char* stream_kind_name(StreamKind k) {
  switch (k) {
    case StreamKind::kConstant: return "constant";
    case StreamKind::kDrift2d: return "drift2d";
    case StreamKind::kReplay: return "replay";
  }
  return "?";
}

inline StreamKind parse_stream_kind(const std::string& s) {
  if (s == "constant") return StreamKind::kConstant;
  if (s == "drift2d") return StreamKind::kDrift2d;
  if (s == "replay") return StreamKind::kReplay;
  throw ParseError("unknown stream kind '" + s + "' (expected constant, drift2d or replay)");
}

// A source polled by a single driver. `interval_seconds` is the nominal
// inter-arrival time; it is informational unless pacing is enabled.
template <typename T>
class StreamSource {
 public:
  virtual ~StreamSource() = default;
  virtual StreamKind kind() const = 0;
  virtual std::optional<Sample<T>> next() = 0;

  double interval_seconds = 0.0;
  bool pace = false;

 protected:
  void maybe_pace() {
    if (!pace || interval_seconds <= 0) return;
    const auto now = std::chrono::steady_clock::now();
    if (last_) {
      const auto due = *last_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(interval_seconds));
      if (due > now) std::this_thread::sleep_until(due);
    }
    last_ = std::chrono::steady_clock::now();
  }

 private:
  std::optional<std::chrono::steady_clock::time_point> last_;
};

template <typename T>
class ConstantStream final : public StreamSource<T> {
 public:
  ConstantStream(Tensor<T> x, Tensor<T> target) : x_(std::move(x)), target_(std::move(target)) {}

  StreamKind kind() const override { return StreamKind::kConstant; }

  std::optional<Sample<T>> next() override {
    this->maybe_pace();
    return Sample<T>{x_, target_, id_++};
  }

 private:
  Tensor<T> x_, target_;
  std::int64_t id_ = 0;
};

struct Drift2dConfig {
  std::size_t classes = 3;
  double rho = 1e-3;     // radians per step
  double sigma = 0.3;    // isotropic noise
  double radius = 1.0;   // distance of class means from the origin
  std::size_t batch = 1; // points per emitted sample
  // Row b always belongs to class b mod classes, so consecutive samples are
  // aligned; otherwise every row draws its class at random.
  bool stratified = true;
  std::uint64_t seed = 0;
};

// Points in the plane drawn from class-conditional Gaussians whose means sit
// evenly on a circle that rotates by rho every step. Targets are class
// labels, one per batch row.
template <typename T>
class Drift2dStream final : public StreamSource<T> {
 public:
  explicit Drift2dStream(Drift2dConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg_.classes < 2) throw ContractViolation("drift2d needs at least 2 classes");
    if (!(cfg_.rho >= 0)) throw ContractViolation("drift2d rotation rate must be >= 0");
    if (cfg_.batch < 1) throw ContractViolation("drift2d batch must be >= 1");
  }

  StreamKind kind() const override { return StreamKind::kDrift2d; }

  std::vector<std::array<double, 2>> class_means(std::int64_t t) const {
    std::vector<std::array<double, 2>> out;
    for (std::size_t c = 0; c < cfg_.classes; ++c) {
      const double a = 2 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(cfg_.classes) +
                       cfg_.rho * static_cast<double>(t);
      out.push_back({cfg_.radius * std::cos(a), cfg_.radius * std::sin(a)});
    }
    return out;
  }

  std::optional<Sample<T>> next() override {
    this->maybe_pace();
    const auto means = class_means(t_);
    Tensor<T> x({cfg_.batch, 2});
    Tensor<T> y({cfg_.batch});
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
      const std::size_t c = cfg_.stratified ? b % cfg_.classes : static_cast<std::size_t>(rng_.below(cfg_.classes));
      x[b * 2] = static_cast<T>(means[c][0] + cfg_.sigma * rng_.normal());
      x[b * 2 + 1] = static_cast<T>(means[c][1] + cfg_.sigma * rng_.normal());
      y[b] = static_cast<T>(c);
    }
    return Sample<T>{std::move(x), std::move(y), t_++};
  }

  const Drift2dConfig& config() const { return cfg_; }

 private:
  Drift2dConfig cfg_;
  Rng rng_;
  std::int64_t t_ = 0;
};

// Labelled samples of a fixed per-sample shape.
struct DatasetFile {
  Shape shape;
  std::uint32_t classes = 0;
  std::vector<float> data;  // N * numel(shape), row-major
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return shape_numel(shape); }
};

namespace stream_detail {

inline constexpr char kDatasetMagic[4] = {'P', 'T', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::string& what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw ParseError("dataset header truncated at " + what);
  return v;
}

}  // namespace stream_detail

// Layout (little-endian): "PTDS", u32 version, u64 N, u32 rank, u64 dims[rank],
// u32 classes, then N records of numel f32 values followed by an i32 label.
inline void dataset_write(const std::filesystem::path& path, const DatasetFile& ds) {
  if (ds.data.size() != ds.size() * ds.sample_numel()) {
    throw ContractViolation("dataset has " + std::to_string(ds.data.size()) + " values for " +
                            std::to_string(ds.size()) + " samples of shape " + shape_string(ds.shape));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  using stream_detail::put;
  os.write(stream_detail::kDatasetMagic, 4);
  put<std::uint32_t>(os, stream_detail::kDatasetVersion);
  put<std::uint64_t>(os, ds.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.shape.size()));
  for (auto d : ds.shape) put<std::uint64_t>(os, d);
  put<std::uint32_t>(os, ds.classes);
  const std::size_t n = ds.sample_numel();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os.write(reinterpret_cast<const char*>(ds.data.data() + i * n), static_cast<std::streamsize>(n * sizeof(float)));
    put<std::int32_t>(os, ds.labels[i]);
  }
  if (!os) throw Error("write failed for " + path.string());
}

inline DatasetFile dataset_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open dataset " + path.string());
  using stream_detail::get;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, stream_detail::kDatasetMagic, 4) != 0) {
    throw ParseError(path.string() + ": not a dataset file (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, "version");
  if (version != stream_detail::kDatasetVersion) {
    throw ParseError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  DatasetFile ds;
  const auto n = get<std::uint64_t>(is, "sample count");
  const auto rank = get<std::uint32_t>(is, "rank");
  if (rank == 0 || rank > 8) throw ParseError(path.string() + ": bad rank " + std::to_string(rank));
  for (std::uint32_t r = 0; r < rank; ++r) {
    const auto d = get<std::uint64_t>(is, "dim " + std::to_string(r));
    if (d == 0) throw ParseError(path.string() + ": zero dimension in sample shape");
    ds.shape.push_back(d);
  }
  ds.classes = get<std::uint32_t>(is, "classes");
  const std::uintmax_t header = 4 + 4 + 8 + 4 + 8 * std::uintmax_t{rank} + 4;
  const std::uintmax_t record = ds.sample_numel() * sizeof(float) + sizeof(std::int32_t);
  const std::uintmax_t expected = header + n * record;
  const std::uintmax_t actual = std::filesystem::file_size(path);
  if (actual != expected) {
    throw ParseError(path.string() + ": expected " + std::to_string(expected) + " bytes from header, found " +
                     std::to_string(actual));
  }
  ds.data.resize(n * ds.sample_numel());
  ds.labels.resize(n);
  const std::size_t numel = ds.sample_numel();
  for (std::size_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(ds.data.data() + i * numel), static_cast<std::streamsize>(numel * sizeof(float)));
    ds.labels[i] = get<std::int32_t>(is, "label");
    if (ds.labels[i] < 0 || static_cast<std::uint32_t>(ds.labels[i]) >= ds.classes) {
      throw ParseError(path.string() + ": sample " + std::to_string(i) + " label " + std::to_string(ds.labels[i]) +
                       " outside [0, " + std::to_string(ds.classes) + ")");
    }
  }
  return ds;
}

// Gaussian blobs around random class prototypes; a stand-in for an image
// classification set. Labels come in runs of `run_length` consecutive
// samples of one class (1 gives an i.i.d. order), mimicking a temporally
// coherent stream.
inline DatasetFile make_blob_dataset(std::size_t n, std::uint32_t classes, Shape shape, double noise,
                                     std::uint64_t seed, std::uint64_t prototype_seed, std::size_t run_length = 1) {
  if (classes < 1) throw ContractViolation("dataset needs at least one class");
  if (run_length < 1) throw ContractViolation("run length must be >= 1");
  DatasetFile ds;
  ds.shape = std::move(shape);
  ds.classes = classes;
  const std::size_t numel = ds.sample_numel();
  Rng proto_rng(prototype_seed);
  std::vector<double> protos(classes * numel);
  for (auto& p : protos) p = proto_rng.normal();
  Rng rng(seed);
  ds.data.resize(n * numel);
  ds.labels.resize(n);
  std::uint32_t c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % run_length == 0) c = static_cast<std::uint32_t>(rng.below(classes));
    ds.labels[i] = static_cast<std::int32_t>(c);
    for (std::size_t k = 0; k < numel; ++k) {
      ds.data[i * numel + k] = static_cast<float>(protos[c * numel + k] + noise * rng.normal());
    }
  }
  return ds;
}

template <typename T>
Tensor<T> dataset_sample(const DatasetFile& ds, std::size_t i) {
  const std::size_t n = ds.sample_numel();
  std::vector<T> v(ds.data.begin() + static_cast<std::ptrdiff_t>(i * n),
                   ds.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor<T>(batched(1, ds.shape), std::move(v));
}

// Whole dataset as one batch: ([N]+shape, [N] labels).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> dataset_batch(const DatasetFile& ds) {
  if (ds.size() == 0) throw ContractViolation("empty dataset");
  std::vector<T> x(ds.data.begin(), ds.data.end());
  std::vector<T> y(ds.labels.begin(), ds.labels.end());
  return {Tensor<T>(batched(ds.size(), ds.shape), std::move(x)), Tensor<T>({ds.size()}, std::move(y))};
}

// kNewestFirst shifts the window every step: [b,a,a] -> [c,b,a].
// kRing overwrites the oldest row in place: [b,a,a] -> [b,c,a], so every
// other row keeps its position from one step to the next.
enum class ReplayLayout { kNewestFirst, kRing };

inline const char* replay_layout_name(ReplayLayout l) { return l == ReplayLayout::kRing ? "ring" : "newest-first"; }

inline ReplayLayout parse_replay_layout(const std::string& s) {
  if (s == "ring") return ReplayLayout::kRing;
  if (s == "newest-first") return ReplayLayout::kNewestFirst;
  throw ParseError("unknown replay layout '" + s + "' (expected ring or newest-first)");
}

// Sliding replay window over a dataset: each step admits the next sample and
// drops the oldest. The window starts filled with copies of the first
// sample. Emits the whole window as a batch.
template <typename T>
class ReplayStream final : public StreamSource<T> {
 public:
  ReplayStream(DatasetFile ds, std::size_t window, std::size_t passes = 1,
               ReplayLayout layout = ReplayLayout::kNewestFirst)
      : ds_(std::move(ds)), window_(window), passes_(passes), layout_(layout) {
    if (window_ < 1) throw ContractViolation("replay window must be >= 1");
    if (passes_ < 1) throw ContractViolation("replay passes must be >= 1");
    if (ds_.size() == 0) throw Error("replay over an empty dataset");
  }

  StreamKind kind() const override { return StreamKind::kReplay; }

  std::optional<Sample<T>> next() override {
    if (admitted_ >= ds_.size() * passes_) return std::nullopt;
    this->maybe_pace();
    const std::size_t idx = admitted_ % ds_.size();
    if (slots_.empty()) {
      slots_.assign(window_, idx);
    } else if (layout_ == ReplayLayout::kRing) {
      slots_[next_row_] = idx;
      next_row_ = (next_row_ + 1) % window_;
    } else {
      slots_.push_front(idx);
      slots_.pop_back();
    }
    const std::size_t n = ds_.sample_numel();
    Tensor<T> x(batched(window_, ds_.shape));
    Tensor<T> y({window_});
    for (std::size_t w = 0; w < window_; ++w) {
      const float* src = ds_.data.data() + slots_[w] * n;
      for (std::size_t k = 0; k < n; ++k) x[w * n + k] = static_cast<T>(src[k]);
      y[w] = static_cast<T>(ds_.labels[slots_[w]]);
    }
    return Sample<T>{std::move(x), std::move(y), static_cast<std::int64_t>(admitted_++)};
  }

  // Dataset indices currently in the window, in row order.
  const std::deque<std::size_t>& window_indices() const { return slots_; }

 private:
  DatasetFile ds_;
  std::size_t window_;
  std::size_t passes_;
  ReplayLayout layout_;
  std::size_t next_row_ = 0;  // ring: row holding the oldest sample
  std::size_t admitted_ = 0;
  std::deque<std::size_t> slots_;
};

// Drives `pipeline` for up to `n_steps` steps; stops cleanly if the stream
// runs dry.
template <typename T>
RunReport pipeline_run(Pipeline<T>& pipeline, StreamSource<T>& stream, std::size_t n_steps,
                       const std::function<void(const RunRow&)>& log_sink = {}) {
  RunReport report;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < n_steps; ++i) {
    auto sample = stream.next();
    if (!sample) {
      report.stream_exhausted = true;
      break;
    }
    const auto out = pipeline.step(sample->x, sample->target);
    RunRow row;
    row.step = out.step;
    row.sample_id = out.source_sample_id;
    row.loss = static_cast<double>(out.loss);
    row.valid = out.valid;
    row.step_wall_seconds = pipeline.last_step_seconds();
    if (row.valid) ++report.valid_outputs;
    report.rows.push_back(row);
    if (log_sink) log_sink(row);
  }
  report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.throughput = report.elapsed_seconds > 0 ? static_cast<double>(report.valid_outputs) / report.elapsed_seconds
                                                 : 0.0;
  return report;
}

}  // namespace partime
