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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace smatd {

enum class Label { kHT, kMT };

std::string_view to_string(Label label);
/// Accepts "HT" or "MT"; anything else is a validation error.
Label parse_label(std::string_view text);

inline constexpr std::string_view kHumanProducer = "human";

struct LangPair {
  std::string src;
  std::string tgt;

  auto operator<=>(const LangPair&) const = default;
  /// "de-en"
  std::string str() const { return src + "-" + tgt; }
  static LangPair parse(std::string_view text);
};

/// Borrowed view of the texts a model needs; carries no label.
struct PairView {
  std::string_view id;
  std::string_view src_lang;
  std::string_view tgt_lang;
  std::string_view source;
  std::string_view target;
};

/// One labeled example. `id` is the *source* id: an HT item and its MT
/// siblings share it, which makes it the join key for balancing. The pair
/// itself is identified by key() = id + '|' + producer.
struct SentencePair {
  std::string id;
  std::string src_lang;
  std::string tgt_lang;
  std::string source_text;
  std::string target_text;
  Label label = Label::kHT;
  std::string producer{kHumanProducer};
  std::string edition;

  std::string key() const { return id + "|" + producer; }
  LangPair lang_pair() const { return {src_lang, tgt_lang}; }
  PairView view() const;

  bool operator==(const SentencePair&) const = default;
};

/// Throws ErrorKind::kValidation naming the offending field.
void validate(const SentencePair& pair);

std::string to_jsonl(const SentencePair& pair);
SentencePair parse_jsonl(std::string_view line, std::size_t line_number = 0);

/// Reads the labeled JSONL dataset format, preserving file order. Each record
/// is validated; errors carry the 1-based line number.
std::vector<SentencePair> load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path,
                  std::span<const SentencePair> pairs);

/// A record of the unlabeled (filtering) input format: label and producer are
/// optional. The original line is retained so filtered output is verbatim.
struct UnlabeledPair {
  std::string id;
  std::string src_lang;
  std::string tgt_lang;
  std::string source_text;
  std::string target_text;
  std::optional<Label> label;
  std::optional<std::string> producer;
  std::string edition;
  std::string raw_line;

  PairView view() const;
};

std::vector<UnlabeledPair> load_unlabeled(const std::filesystem::path& path);

enum class SplitName { kTrain, kDev, kTest };
std::string_view to_string(SplitName name);
SplitName parse_split_name(std::string_view text);

struct CorpusSplit {
  SplitName name = SplitName::kTrain;
  std::vector<SentencePair> pairs;
  LangPair lang_pair;
  std::set<std::string> systems;

  std::size_t ht_count() const;
  std::size_t mt_count(std::string_view system) const;
  std::size_t size() const { return pairs.size(); }
  /// HT items plus the MT items of one system, in split order.
  CorpusSplit restrict_to(std::string_view system) const;
  /// Per-system class balance with one MT sibling per HT source id.
  bool is_balanced() const;
};

/// Equal HT and MT counts (no per-system requirement).
bool is_class_balanced(std::span<const SentencePair> pairs);

/// Pairs every HT item with exactly one MT item per system, matched by
/// source id. Output order: for each HT item in input order, the HT item
/// followed by its MT siblings in system-name order.
CorpusSplit build_balanced_split(
    std::vector<SentencePair> ht,
    std::map<std::string, std::vector<SentencePair>> mt_by_system,
    SplitName name);

/// Groups a mixed file (HT and MT records) by producer and balances it.
CorpusSplit split_from_pairs(std::vector<SentencePair> pairs, SplitName name);

struct EpochSample {
  std::size_t epoch_index = 0;
  std::uint64_t seed = 0;
  std::vector<SentencePair> pairs;
  /// Multi-MT mode: the system drawn for each HT item, in HT order.
  std::vector<std::string> system_assignment;
  /// Multilingual mode: realized number of source units per language.
  std::map<LangPair, std::size_t> language_counts;
};

/// One MT sibling per HT item drawn uniformly over systems from the stream
/// keyed by (seed, "multi-mt", epoch). HT items are always included.
EpochSample sample_multi_mt_epoch(const CorpusSplit& split, std::size_t epoch,
                                  std::uint64_t seed);

/// Pre-samples one MT system per HT item for a development split. Pure
/// function of (split, seed).
CorpusSplit freeze_dev_multi_mt(const CorpusSplit& split, std::uint64_t seed);

/// Writes `dev` as JSONL and a sidecar `<path>.meta.json` holding the seed.
void persist_frozen_dev(const CorpusSplit& dev, std::uint64_t seed,
                        const std::filesystem::path& path);

struct LanguageWeights {
  std::map<LangPair, double> proportions;
  double inv_temperature = 0.3;

  /// Proportions from raw sizes (p_l = n_l / sum n).
  static LanguageWeights from_sizes(const std::map<LangPair, std::size_t>& sizes,
                                    double inv_temperature);
  /// w_l = p_l^(1/T) / sum_j p_j^(1/T). Throws kDomain when 1/T <= 0.
  std::map<LangPair, double> sampling_weights() const;
};

/// Temperature-based multilingual epoch. `total` counts source units (an HT
/// item together with one MT sibling); it defaults to the sum of the HT
/// counts of all splits. Within a language units are drawn without
/// replacement when the requested count fits, with replacement otherwise.
EpochSample sample_multilingual_epoch(
    const std::map<LangPair, CorpusSplit>& splits, const LanguageWeights& weights,
    std::size_t epoch, std::uint64_t seed,
    std::optional<std::size_t> total = std::nullopt);

}  // namespace smatd
