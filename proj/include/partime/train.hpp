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

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "partime/engine.hpp"
#include "partime/error.hpp"
#include "partime/generators.hpp"
#include "partime/model.hpp"
#include "partime/model_io.hpp"
#include "partime/streams.hpp"

namespace partime {

struct TrainConfig {
  StreamKind stream = StreamKind::kDrift2d;
  Drift2dConfig drift;
  std::string dataset_path;
  std::size_t replay_window = 16;
  std::size_t replay_passes = 1;
  ReplayLayout replay_layout = ReplayLayout::kRing;
  std::string model_path;     // empty: default model for the stream
  std::size_t hidden = 32;
  std::size_t stages = 2;
  std::size_t steps = 1000;
  OptimizerConfig optimizer;
  std::size_t loss_window = 100;
  bool compare_sequential = false;
  std::uint64_t seed = 0;
  double interval_seconds = 0.0;
  bool pace = false;
};

struct TrainRow {
  std::int64_t step = 0;
  std::int64_t sample_id = -1;
  bool valid = false;
  double loss = 0.0;
  double windowed_mean_loss = 0.0;
  double seq_loss = 0.0;
  double seq_windowed_mean_loss = 0.0;
};

template <typename T>
struct TrainReport {
  std::vector<TrainRow> rows;
  bool compared = false;
  bool diverged = false;
  std::string failure;
  Model<T> final_model;
  Model<T> sequential_model;
};

namespace train_detail {

class WindowMean {
 public:
  explicit WindowMean(std::size_t w) : w_(std::max<std::size_t>(w, 1)) {}
  double push(double v) {
    q_.push_back(v);
    sum_ += v;
    if (q_.size() > w_) {
      sum_ -= q_.front();
      q_.pop_front();
    }
    return sum_ / static_cast<double>(q_.size());
  }

 private:
  std::size_t w_;
  std::deque<double> q_;
  double sum_ = 0;
};

template <typename T>
std::unique_ptr<StreamSource<T>> make_stream(const TrainConfig& c, const std::optional<DatasetFile>& ds) {
  std::unique_ptr<StreamSource<T>> s;
  switch (c.stream) {
    case StreamKind::kDrift2d: {
      Drift2dConfig d = c.drift;
      d.seed = c.seed;
      s = std::make_unique<Drift2dStream<T>>(d);
      break;
    }
    case StreamKind::kReplay: s = std::make_unique<ReplayStream<T>>(*ds, c.replay_window, c.replay_passes, c.replay_layout); break;
    case StreamKind::kConstant: {
      Rng rng(mix_seed(c.seed, 0xc0));
      Tensor<T> x({1, 4}), y({1, 4});
      for (std::size_t i = 0; i < 4; ++i) {
        x[i] = static_cast<T>(rng.normal());
        y[i] = static_cast<T>(0.5 * rng.normal());
      }
      s = std::make_unique<ConstantStream<T>>(x, y);
      break;
    }
  }
  s->interval_seconds = c.interval_seconds;
  s->pace = c.pace;
  return s;
}

}  // namespace train_detail

template <typename T>
Model<T> default_train_model(const TrainConfig& c, const std::optional<DatasetFile>& ds) {
  if (!c.model_path.empty()) return model_load<T>(c.model_path);
  const std::uint64_t seed = mix_seed(c.seed, 0x3d);
  switch (c.stream) {
    case StreamKind::kDrift2d:
      return mlp_model<T>({2, c.hidden, c.hidden, c.drift.classes}, LossKind::kSoftmaxCrossEntropy, seed);
    case StreamKind::kConstant: return mlp_model<T>({4, c.hidden, 4}, LossKind::kMse, seed);
    case StreamKind::kReplay: {
      std::vector<LayerSpec> specs;
      if (ds->shape.size() > 1) specs.push_back(LayerSpec::flatten());
      specs.push_back(LayerSpec::dense(ds->sample_numel(), c.hidden));
      specs.push_back(LayerSpec::tanh());
      specs.push_back(LayerSpec::dense(c.hidden, ds->classes));
      return build_model<T>(specs, ds->shape, LossKind::kSoftmaxCrossEntropy, seed);
    }
  }
  throw Error("unreachable stream kind");
}

// Runs the pipeline over the configured stream; optionally repeats the run
// with the sequential trainer on an identical stream and lines the two loss
// curves up by sample id.
template <typename T>
TrainReport<T> run_train(const TrainConfig& c) {
  if (c.stages < 1) throw ContractViolation("train needs stages >= 1");
  std::optional<DatasetFile> ds;
  if (c.stream == StreamKind::kReplay) {
    if (c.dataset_path.empty()) throw ContractViolation("replay stream needs a dataset path");
    ds = dataset_read(c.dataset_path);
  }
  const Model<T> model = default_train_model<T>(c, ds);
  TrainReport<T> rep;

  std::vector<double> seq_losses;
  if (c.compare_sequential) {
    rep.compared = true;
    auto stream = train_detail::make_stream<T>(c, ds);
    SequentialTrainer<T> trainer(model, c.optimizer);
    for (std::size_t i = 0; i < c.steps; ++i) {
      auto s = stream->next();
      if (!s) break;
      seq_losses.push_back(static_cast<double>(trainer.step(s->x, s->target).loss));
    }
    rep.sequential_model = trainer.model();
  }

  auto stream = train_detail::make_stream<T>(c, ds);
  auto first = train_detail::make_stream<T>(c, ds)->next();
  if (!first) throw Error("stream produced no samples");
  PipelineOptions po;
  po.optimizer = c.optimizer;
  Pipeline<T> pipe(model, uniform_plan(model.layers.size(), std::min(c.stages, model.layers.size())), po, first->x,
                   first->target);
  train_detail::WindowMean win(c.loss_window), seq_win(c.loss_window);
  try {
    pipeline_run(pipe, *stream, c.steps, [&](const RunRow& r) {
      TrainRow row;
      row.step = r.step;
      row.sample_id = r.sample_id;
      row.valid = r.valid;
      if (r.valid) {
        row.loss = r.loss;
        row.windowed_mean_loss = win.push(r.loss);
        if (rep.compared && static_cast<std::size_t>(r.sample_id) < seq_losses.size()) {
          row.seq_loss = seq_losses[static_cast<std::size_t>(r.sample_id)];
          row.seq_windowed_mean_loss = seq_win.push(row.seq_loss);
        }
      }
      rep.rows.push_back(row);
    });
  } catch (const NumericError& e) {
    rep.diverged = true;
    rep.failure = e.what();
    return rep;
  }
  rep.final_model = pipe.extract_weights();
  return rep;
}

inline void write_train_csv(std::ostream& os, const std::vector<TrainRow>& rows, bool compared) {
  os << "step,sample_id,loss,windowed_mean_loss";
  if (compared) os << ",seq_loss,seq_windowed_mean_loss";
  os << '\n';
  for (const auto& r : rows) {
    if (!r.valid) continue;
    os << r.step << ',' << r.sample_id << ',' << r.loss << ',' << r.windowed_mean_loss;
    if (compared) os << ',' << r.seq_loss << ',' << r.seq_windowed_mean_loss;
    os << '\n';
  }
}

// Fraction of correctly classified samples of `ds` under `model`.
template <typename T>
double dataset_accuracy(const Model<T>& model, const DatasetFile& ds) {
  const auto [x, y] = dataset_batch<T>(ds);
  return accuracy(model_forward(model, x), y);
}

}  // namespace partime
