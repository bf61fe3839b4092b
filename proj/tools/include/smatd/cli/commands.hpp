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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smatd/detector.hpp"
#include "smatd/encoder_lm.hpp"
#include "smatd/error.hpp"
#include "smatd/surrogate.hpp"
#include "smatd/trainer.hpp"

namespace smatd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitPartial = 2;
inline constexpr int kExitCompute = 3;

/// 1 for bad input or configuration, 2 for per-item data failures, 3 for
/// failures during training or scoring.
int exit_code_for(const Error& error);

enum class ExperimentMode { kSmatd, kSmatdPlusLm, kLmBaseline, kMlmBaseline };
enum class SamplingMode { kSingle, kMultiMt, kMultilingual };

std::string_view to_string(ExperimentMode mode);
std::string_view to_string(SamplingMode mode);
ExperimentMode parse_experiment_mode(std::string_view text);
SamplingMode parse_sampling_mode(std::string_view text);

/// Experiment description read from a `key = value` file ('#' starts a
/// comment). Relative paths resolve against the file's directory.
struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::kSmatd;
  SamplingMode sampling = SamplingMode::kSingle;
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> dev;
  std::vector<std::filesystem::path> test;
  std::string surrogate;
  int block = 0;
  /// LM checkpoint directory for smatd_plus_lm, LM init id for baselines.
  std::optional<std::string> lm;
  DetectorConfig detector;
  TrainConfig train_config;
  double inv_temperature = 0.3;
  std::optional<std::size_t> epoch_units;
  std::uint64_t dev_seed = 0;
  std::filesystem::path output = "out";
  std::optional<std::filesystem::path> cache;
  /// FNV-1a over the canonical key = value listing.
  std::string digest;

  static ExperimentConfig parse(std::string_view text,
                                const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Cross-field checks; kUsage naming the offending key.
  void validate() const;
  /// Explicit `cache` key, else $SMATD_CACHE_DIR, else <output>/cache.
  std::filesystem::path cache_root() const;
  std::string canonical() const;
};

struct FilterOptions {
  std::filesystem::path input;
  std::filesystem::path model_dir;
  std::filesystem::path output;
  std::optional<std::filesystem::path> report;
  std::optional<double> threshold;
  std::optional<std::filesystem::path> cache;
};

/// Pairs are kept when p_ht >= threshold.
struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  /// Subset of `dropped` whose language the surrogate cannot process.
  std::size_t dropped_unsupported = 0;
  double threshold = 0.5;
  std::array<std::size_t, 20> histogram{};
  std::string to_json() const;
};

FilterReport run_filter(const FilterOptions& options);

struct EvalOptions {
  std::filesystem::path model_dir;
  std::filesystem::path test;
  std::filesystem::path report;
  std::optional<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> cache;
};

struct CrossEvalOptions {
  /// name -> model directory
  std::map<std::string, std::filesystem::path> models;
  std::vector<std::filesystem::path> tests;
  std::filesystem::path report_json;
  std::optional<std::filesystem::path> report_tsv;
  std::optional<std::string> baseline;
  std::uint64_t iterations = 10000;
  std::optional<std::filesystem::path> cache;
};

struct SigtestOptions {
  std::filesystem::path predictions_a;
  std::filesystem::path predictions_b;
  std::uint64_t iterations = 10000;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output;
};

struct PerplexityOptions {
  std::string surrogate;
  std::filesystem::path input;
  std::filesystem::path output;
};

int cmd_ingest_validate(const std::filesystem::path& input, std::ostream& log);
int cmd_extract(const ExperimentConfig& config, std::ostream& log);
int cmd_train(const ExperimentConfig& config, std::ostream& log);
int cmd_train_lm(const ExperimentConfig& config, std::ostream& log);
int cmd_sweep(const ExperimentConfig& config, std::span<const int> blocks, std::ostream& log);
int cmd_eval(const EvalOptions& options, std::ostream& log);
int cmd_cross_eval(const CrossEvalOptions& options, std::ostream& log);
int cmd_sigtest(const SigtestOptions& options, std::ostream& log);
int cmd_perplexity(const PerplexityOptions& options, std::ostream& log);
int cmd_filter(const FilterOptions& options, std::ostream& log);
int cmd_variability(std::span<const double> values, const std::optional<std::filesystem::path>& output,
                    std::ostream& log);

/// Surrogate states (through the extraction cache) and optional LM [CLS]
/// vectors for detector inputs.
class Featurizer {
 public:
  Featurizer(const SurrogateAdapter& surrogate, ExtractionCache cache, int block,
             const LmAdapter* lm = nullptr);
  DetectorExample operator()(const SentencePair& pair) const;
  DetectorExample operator()(const UnlabeledPair& pair) const;
  std::vector<DetectorExample> all(std::span<const SentencePair> pairs) const;
  /// Extracts and stores unless present; returns true when newly stored.
  bool warm(const PairView& pair, std::string_view key) const;

 private:
  DetectorExample build(const PairView& pair, std::string_view key, Label label) const;
  const SurrogateAdapter& surrogate_;
  ExtractionCache cache_;
  int block_;
  const LmAdapter* lm_;
};

}  // namespace smatd::cli
