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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "smatd/corpus.hpp"
#include "smatd/detector.hpp"

namespace smatd {

/// Fraction of exact matches; kInput on length mismatch or empty input.
double accuracy(std::span<const Label> predictions, std::span<const Label> gold);

struct SignificanceResult {
  std::string cell_a;
  std::string cell_b;
  double observed = 0.0;  // |acc_a - acc_b|
  double p_value = 1.0;
  std::uint64_t iterations = 0;
  bool significant = false;  // p < 0.05
};

inline constexpr double kSignificanceLevel = 0.05;
inline constexpr std::uint64_t kDefaultRandomizationIterations = 10000;

/// Paired approximate randomization on per-item correctness. Each iteration
/// swaps the two outcomes of every item independently with probability 1/2;
/// p = (#{stat >= observed} + 1) / (iterations + 1) with stat = |acc_a - acc_b|.
/// Iteration i draws from the stream keyed by (seed, i).
SignificanceResult approx_randomization(const std::vector<bool>& correct_a,
                                        const std::vector<bool>& correct_b,
                                        std::uint64_t iterations = kDefaultRandomizationIterations,
                                        std::uint64_t seed = 0);

struct RunVariability {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  double sd = 0.0;  // sample SD (n - 1)
  std::size_t n_runs = 0;
  /// False when a single value was given and sd was set to 0 by convention.
  bool sd_defined = true;
};

RunVariability variability_report(std::span<const double> values);

struct SweepCondition {
  LangPair lang_pair;
  std::string system;

  std::string name() const { return lang_pair.str() + "/" + system; }
  auto operator<=>(const SweepCondition&) const = default;
};

struct LayerSweepResult {
  /// accuracy[condition name][block]; failed cells are absent.
  std::map<std::string, std::map<int, double>> accuracy;
  std::map<int, double> aggregate;
  int best_block = 0;
  /// accuracy(condition, block) - accuracy(condition, best_block).
  std::map<std::string, std::map<int, double>> delta_to_best;
  std::vector<std::string> failures;
  double aggregate_median = 0.0;
  double aggregate_mean = 0.0;
  double aggregate_sd = 0.0;
};

/// Trains and evaluates one cell, returning dev accuracy.
using SweepCellFn = std::function<double(const SweepCondition&, int block)>;

/// Runs every (condition, block) cell, aggregates per block by unweighted
/// mean over completed cells and selects the first argmax. A throwing cell
/// is recorded in `failures` and skipped.
LayerSweepResult layer_sweep(std::span<const SweepCondition> conditions,
                             std::span<const int> blocks, const SweepCellFn& cell);

struct EvalCell {
  std::string train_condition;
  std::set<std::string> train_langs;
  std::set<std::string> train_systems;
  std::string eval_condition;
  std::string eval_lang;
  std::string eval_system;
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t correct_count = 0;
  bool zero_shot = false;
  std::optional<double> p_value_vs_baseline;
  std::vector<bool> correct;

  std::string id() const { return train_condition + "@" + eval_condition; }
};

struct TrainCondition {
  std::string name;
  std::set<std::string> langs;    // "de-en"
  std::set<std::string> systems;
  const DetectorModel* model = nullptr;
};

struct EvalCondition {
  std::string name;
  LangPair lang_pair;
  std::string system;
};

/// Features of an evaluation condition as seen by a trained condition's
/// surrogate and block.
using FeatureFn = std::function<std::vector<DetectorExample>(const TrainCondition&,
                                                             const EvalCondition&)>;

struct CrossEvalResult {
  std::vector<EvalCell> cells;
  std::vector<std::string> skipped;  // "<cell id>: <reason>"
};

/// Evaluates every (model, test) combination. Incompatible cells (feature
/// width mismatch, unsupported language) are skipped and logged.
CrossEvalResult cross_eval(std::span<const TrainCondition> models,
                           std::span<const EvalCondition> tests, const FeatureFn& features);

/// Scores examples and returns a cell without condition metadata.
EvalCell evaluate_examples(const DetectorModel& model, std::span<const DetectorExample> examples);

struct EvalReport {
  std::vector<EvalCell> cells;
  std::vector<SignificanceResult> significance;
  std::map<std::string, std::string> metadata;
};

void write_report_json(const std::filesystem::path& path, const EvalReport& report);
/// Columns: train_langs, train_systems, eval_lang, eval_system, n, accuracy,
/// zero_shot, p_value_vs_baseline.
void write_report_tsv(const std::filesystem::path& path, const EvalReport& report);
std::string to_json(const RunVariability& v, std::span<const std::uint64_t> seeds,
                    std::string_view split);
std::string to_json(const LayerSweepResult& sweep);

}  // namespace smatd
