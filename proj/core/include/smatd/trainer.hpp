/*
 * Copyright 2026 The smatd Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Optimization loop shared by the detector and the encoder LM: inverse
// square-root schedule, patience-based early stopping and best-checkpoint
// selection.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "smatd/corpus.hpp"
#include "smatd/error.hpp"
#include "smatd/nn.hpp"
#include "smatd/rng.hpp"

namespace smatd {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::uint64_t warmup_steps = 400;
  int patience_epochs = 6;
  std::size_t batch_size = 32;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double weight_decay = 0.0;
  /// Guard standing in for "unlimited" training.
  int max_epochs = 10000;

  static TrainConfig detector_defaults() { return {}; }
  static TrainConfig lm_defaults() {
    TrainConfig c;
    c.learning_rate = 1e-5;
    return c;
  }
  /// Throws kConfiguration on a violated invariant.
  void validate() const;
};

/// peak * min(step / warmup, sqrt(warmup / step)); `step` is 1-based.
double lr_at(std::uint64_t step, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double lr_at_epoch_end = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;

  double best_dev_accuracy() const;
};

void write_history_jsonl(const std::filesystem::path& path, const TrainingHistory& history);
TrainingHistory read_history_jsonl(const std::filesystem::path& path);

/// Patience counter on a metric to maximize. Only strict improvements reset
/// it, so the earliest epoch wins ties.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Returns true when `metric` is a new best.
  bool observe(int epoch, double metric);
  bool exhausted() const { return last_epoch_ - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_metric_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  int last_epoch_ = 0;
  double best_metric_ = -std::numeric_limits<double>::infinity();
};

/// A model the generic loop can optimize: it exposes its parameters, adds
/// the training-mode loss gradient of one example into them, and predicts.
template <typename M>
concept Trainable = std::copy_constructible<M> &&
    requires(M& m, const M& cm, const typename M::Example& ex, rng::Engine& engine) {
      { m.parameters() } -> std::same_as<nn::ParameterList>;
      { m.accumulate_gradients(ex, engine) } -> std::convertible_to<double>;
      { cm.predict_label(ex) } -> std::same_as<Label>;
      { ex.label } -> std::convertible_to<Label>;
    };

template <typename M>
struct FitResult {
  M model;
  TrainingHistory history;
};

/// Returns the pool indices that make up the training set of an epoch.
using EpochSelector = std::function<std::vector<std::size_t>(std::size_t epoch)>;

template <typename Example>
std::size_t count_label(std::span<const Example> items, Label label) {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [&](const Example& ex) { return ex.label == label; }));
}

template <Trainable M>
double dev_accuracy(const M& model, std::span<const typename M::Example> dev) {
  std::size_t correct = 0;
  for (const auto& ex : dev) correct += model.predict_label(ex) == ex.label;
  return static_cast<double>(correct) / static_cast<double>(dev.size());
}

/// Minimizes the model's loss with AdamW and the inverse square-root
/// schedule, evaluating dev accuracy after each epoch and stopping once
/// `patience_epochs` epochs pass without improvement. Returns the best-dev
/// checkpoint. Draws come from streams keyed by (seed, purpose, epoch).
template <Trainable M>
FitResult<M> fit(M model, std::span<const typename M::Example> pool,
                 std::span<const typename M::Example> dev, const TrainConfig& config,
                 std::uint64_t seed, const EpochSelector& selector = {}) {
  using Example = typename M::Example;
  config.validate();
  if (dev.empty()) throw Error(ErrorKind::kPrecondition, "empty dev set");
  if (2 * count_label<Example>(dev, Label::kHT) != dev.size()) {
    throw Error(ErrorKind::kPrecondition, "dev set is not class-balanced");
  }

  nn::AdamW optimizer(model.parameters(), {.weight_decay = config.weight_decay});
  const nn::ParameterList params = model.parameters();
  EarlyStopping stopping(config.patience_epochs);
  FitResult<M> result{model, {}};
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (selector) {
      order = selector(static_cast<std::size_t>(epoch));
    } else {
      order.resize(pool.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
    }
    if (order.empty()) {
      throw Error(ErrorKind::kSampler, "epoch " + std::to_string(epoch) + " has no training items");
    }
    for (const auto i : order) {
      if (i >= pool.size()) throw Error(ErrorKind::kSampler, "epoch selector index out of range");
    }
    auto shuffle_engine = rng::stream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_engine);
    auto dropout_engine = rng::stream(seed, "dropout", static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      optimizer.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        double loss = 0.0;
        try {
          loss = model.accumulate_gradients(pool[order[k]], dropout_engine);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kNumeric) throw;
          throw Error(ErrorKind::kTraining, "epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(loss)) {
          throw Error(ErrorKind::kTraining,
                      "non-finite loss in epoch " + std::to_string(epoch));
        }
        loss_sum += loss;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto* p : params) p->grad *= scale;
      optimizer.step(lr_at(++step, config));
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.dev_accuracy = dev_accuracy(model, dev);
    record.lr_at_epoch_end = lr_at(step, config);
    result.history.epochs.push_back(record);
    if (stopping.observe(epoch, record.dev_accuracy)) result.model = model;
    if (stopping.exhausted()) break;
  }
  result.history.best_epoch = stopping.best_epoch();
  return result;
}

}  // namespace smatd
