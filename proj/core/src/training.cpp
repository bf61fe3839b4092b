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
#include "smatd/training.hpp"

#include <fstream>

#include <nlohmann/json.hpp>
#include "smatd/tensor_io.hpp"

namespace smatd {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::kConfiguration, "learning_rate must be > 0");
  if (warmup_steps < 1) throw Error(ErrorKind::kConfiguration, "warmup_steps must be >= 1");
  if (patience_epochs < 1) throw Error(ErrorKind::kConfiguration, "patience must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::kConfiguration, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorKind::kConfiguration, "max_epochs must be >= 1");
  if (weight_decay < 0.0) throw Error(ErrorKind::kConfiguration, "weight_decay must be >= 0");
}

double lr_at(std::uint64_t step, const TrainConfig& config) {
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  const double w = static_cast<double>(config.warmup_steps);
  return config.learning_rate * std::min(s / w, std::sqrt(w / s));
}

double TrainingHistory::best_dev_accuracy() const {
  for (const auto& e : epochs) {
    if (e.epoch == best_epoch) return e.dev_accuracy;
  }
  return 0.0;
}

void write_history_jsonl(const std::filesystem::path& path, const TrainingHistory& history) {
  std::string text;
  for (const auto& e : history.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["dev_accuracy"] = e.dev_accuracy;
    j["lr_at_epoch_end"] = e.lr_at_epoch_end;
    j["best"] = e.epoch == history.best_epoch;
    text += j.dump() + "\n";
  }
  io::write_text_atomic(path, text);
}

TrainingHistory read_history_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  TrainingHistory h;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EpochRecord e;
    e.epoch = j.at("epoch");
    e.train_loss = j.at("train_loss");
    e.dev_accuracy = j.at("dev_accuracy");
    e.lr_at_epoch_end = j.at("lr_at_epoch_end");
    if (j.value("best", false)) h.best_epoch = e.epoch;
    h.epochs.push_back(e);
  }
  return h;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw Error(ErrorKind::kConfiguration, "patience must be >= 1");
}

bool EarlyStopping::observe(int epoch, double metric) {
  last_epoch_ = epoch;
  if (metric > best_metric_) {
    best_metric_ = metric;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

FitResult<DetectorModel> train_detector(DetectorModel model,
                                        std::span<const DetectorExample> pool,
                                        std::span<const DetectorExample> dev,
                                        const TrainConfig& config, std::uint64_t seed,
                                        const EpochSelector& selector) {
  if (pool.empty()) throw Error(ErrorKind::kSampler, "empty training pool");
  return fit<DetectorModel>(std::move(model), pool, dev, config, seed, selector);
}

std::size_t select_best(std::span<const double> dev_accuracies) {
  if (dev_accuracies.empty()) throw Error(ErrorKind::kInput, "nothing to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_accuracies.size(); ++i) {
    if (dev_accuracies[i] > dev_accuracies[best]) best = i;
  }
  return best;
}

}  // namespace smatd
