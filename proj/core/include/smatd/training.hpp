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

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smatd/detector.hpp"
#include "smatd/error.hpp"
#include "smatd/evaluation.hpp"
#include "smatd/trainer.hpp"

namespace smatd {

/// Trains the detector on precomputed features. With a selector, the
/// training set is regenerated every epoch (multi-MT or multilingual
/// sampling) as indices into `pool`. The surrogate is never touched here.
FitResult<DetectorModel> train_detector(DetectorModel model,
                                        std::span<const DetectorExample> pool,
                                        std::span<const DetectorExample> dev,
                                        const TrainConfig& config, std::uint64_t seed,
                                        const EpochSelector& selector = {});

template <typename M>
struct Replicate {
  std::uint64_t seed = 0;
  M model;
  TrainingHistory history;
  double dev_accuracy = 0.0;
  double test_accuracy = 0.0;
};

template <typename M>
struct ReplicateSummary {
  std::vector<Replicate<M>> runs;  // survivors in seed order
  std::size_t selected = 0;        // index into runs
  RunVariability variability;      // over test accuracies of survivors
  std::vector<std::pair<std::uint64_t, std::string>> failures;

  const Replicate<M>& best() const { return runs[selected]; }
};

/// First index of the maximum.
std::size_t select_best(std::span<const double> dev_accuracies);

/// Trains one replicate per seed and keeps the highest dev accuracy (earliest
/// seed on ties). A throwing replicate is reported in `failures`; selection
/// proceeds if at least one survives.
template <typename M>
ReplicateSummary<M> run_replicates(std::span<const std::uint64_t> seeds,
                                   const std::function<Replicate<M>(std::uint64_t)>& train_one) {
  if (seeds.empty()) throw Error(ErrorKind::kPrecondition, "no replicate seeds");
  ReplicateSummary<M> summary;
  for (const auto seed : seeds) {
    try {
      summary.runs.push_back(train_one(seed));
    } catch (const std::exception& e) {
      summary.failures.emplace_back(seed, e.what());
    }
  }
  if (summary.runs.empty()) {
    std::string report;
    for (const auto& [seed, what] : summary.failures) {
      report += "\n  seed " + std::to_string(seed) + ": " + what;
    }
    throw Error(ErrorKind::kTraining, "every replicate failed:" + report);
  }
  std::vector<double> dev, test;
  for (const auto& run : summary.runs) {
    dev.push_back(run.dev_accuracy);
    test.push_back(run.test_accuracy);
  }
  summary.selected = select_best(dev);
  summary.variability = variability_report(test);
  return summary;
}

}  // namespace smatd
