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
#include "smatd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include "smatd/error.hpp"
#include "smatd/rng.hpp"

namespace smatd {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Label label) { return label == Label::kHT ? "HT" : "MT"; }

Label parse_label(std::string_view text) {
  if (text == "HT") return Label::kHT;
  if (text == "MT") return Label::kMT;
  throw Error(ErrorKind::kValidation, "label must be \"HT\" or \"MT\", got \"" +
                                          std::string(text) + "\"");
}

LangPair LangPair::parse(std::string_view text) {
  const auto dash = text.find('-');
  if (dash == std::string_view::npos || dash == 0 || dash + 1 == text.size()) {
    throw Error(ErrorKind::kValidation,
                "language pair must look like src-tgt, got \"" + std::string(text) + "\"");
  }
  return {std::string(text.substr(0, dash)), std::string(text.substr(dash + 1))};
}

PairView SentencePair::view() const {
  return {id, src_lang, tgt_lang, source_text, target_text};
}

PairView UnlabeledPair::view() const {
  return {id, src_lang, tgt_lang, source_text, target_text};
}

void validate(const SentencePair& pair) {
  auto fail = [&](std::string_view field, std::string_view what) {
    throw Error(ErrorKind::kValidation,
                "field '" + std::string(field) + "' " + std::string(what) +
                    (pair.id.empty() ? std::string() : " (id " + pair.id + ")"));
  };
  if (pair.id.empty()) fail("id", "is empty");
  if (pair.src_lang.empty()) fail("src_lang", "is empty");
  if (pair.tgt_lang.empty()) fail("tgt_lang", "is empty");
  if (pair.src_lang == pair.tgt_lang) fail("tgt_lang", "equals src_lang");
  if (pair.source_text.empty()) fail("source", "is empty");
  if (pair.target_text.empty()) fail("target", "is empty");
  const bool human = pair.producer == kHumanProducer;
  if (pair.label == Label::kHT && !human) fail("producer", "must be \"human\" for HT");
  if (pair.label == Label::kMT && human) fail("producer", "must name an MT system for MT");
  if (pair.producer.empty()) fail("producer", "is empty");
}

std::string to_jsonl(const SentencePair& pair) {
  ordered_json j;
  j["id"] = pair.id;
  j["src_lang"] = pair.src_lang;
  j["tgt_lang"] = pair.tgt_lang;
  j["source"] = pair.source_text;
  j["target"] = pair.target_text;
  j["label"] = std::string(to_string(pair.label));
  j["producer"] = pair.producer;
  j["edition"] = pair.edition;
  return j.dump();
}

namespace {

nlohmann::json parse_object(std::string_view line, std::size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, e.what(), line_number);
  }
  if (!j.is_object()) throw Error(ErrorKind::kParse, "record is not a JSON object", line_number);
  return j;
}

std::string required_string(const nlohmann::json& j, const char* field,
                            std::size_t line_number) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_string()) {
    throw Error(ErrorKind::kValidation,
                std::string("field '") + field + "' is missing or not a string", line_number);
  }
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const nlohmann::json& j, const char* field,
                                           std::size_t line_number) {
  const auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorKind::kValidation, std::string("field '") + field + "' is not a string",
                line_number);
  }
  return it->get<std::string>();
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    f(line, number);
  }
}

}  // namespace

SentencePair parse_jsonl(std::string_view line, std::size_t line_number) {
  const auto j = parse_object(line, line_number);
  SentencePair p;
  p.id = required_string(j, "id", line_number);
  p.src_lang = required_string(j, "src_lang", line_number);
  p.tgt_lang = required_string(j, "tgt_lang", line_number);
  p.source_text = required_string(j, "source", line_number);
  p.target_text = required_string(j, "target", line_number);
  try {
    p.label = parse_label(required_string(j, "label", line_number));
  } catch (const Error& e) {
    if (e.line()) throw;
    throw Error(ErrorKind::kValidation, "field 'label' is invalid", line_number);
  }
  p.producer = required_string(j, "producer", line_number);
  p.edition = optional_string(j, "edition", line_number).value_or("");
  try {
    validate(p);
  } catch (const Error& e) {
    throw Error(e.kind(), e.what(), line_number);
  }
  return p;
}

std::vector<SentencePair> load_corpus(const std::filesystem::path& path) {
  std::vector<SentencePair> out;
  for_each_line(path, [&](const std::string& line, std::size_t number) {
    out.push_back(parse_jsonl(line, number));
  });
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const SentencePair> pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& p : pairs) out << to_jsonl(p) << '\n';
}

std::vector<UnlabeledPair> load_unlabeled(const std::filesystem::path& path) {
  std::vector<UnlabeledPair> out;
  for_each_line(path, [&](const std::string& line, std::size_t number) {
    const auto j = parse_object(line, number);
    UnlabeledPair p;
    p.id = required_string(j, "id", number);
    p.src_lang = required_string(j, "src_lang", number);
    p.tgt_lang = required_string(j, "tgt_lang", number);
    p.source_text = required_string(j, "source", number);
    p.target_text = required_string(j, "target", number);
    if (auto label = optional_string(j, "label", number)) {
      try {
        p.label = parse_label(*label);
      } catch (const Error&) {
        throw Error(ErrorKind::kValidation, "field 'label' is invalid", number);
      }
    }
    p.producer = optional_string(j, "producer", number);
    p.edition = optional_string(j, "edition", number).value_or("");
    if (p.source_text.empty()) throw Error(ErrorKind::kValidation, "field 'source' is empty", number);
    if (p.target_text.empty()) throw Error(ErrorKind::kValidation, "field 'target' is empty", number);
    p.raw_line = line;
    out.push_back(std::move(p));
  });
  return out;
}

std::string_view to_string(SplitName name) {
  switch (name) {
    case SplitName::kTrain: return "train";
    case SplitName::kDev: return "dev";
    case SplitName::kTest: return "test";
  }
  return "train";
}

SplitName parse_split_name(std::string_view text) {
  if (text == "train") return SplitName::kTrain;
  if (text == "dev") return SplitName::kDev;
  if (text == "test") return SplitName::kTest;
  throw Error(ErrorKind::kValidation, "unknown split name \"" + std::string(text) + "\"");
}

std::size_t CorpusSplit::ht_count() const {
  return static_cast<std::size_t>(std::count_if(
      pairs.begin(), pairs.end(), [](const auto& p) { return p.label == Label::kHT; }));
}

std::size_t CorpusSplit::mt_count(std::string_view system) const {
  return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [&](const auto& p) {
    return p.label == Label::kMT && p.producer == system;
  }));
}

CorpusSplit CorpusSplit::restrict_to(std::string_view system) const {
  CorpusSplit out{name, {}, lang_pair, {std::string(system)}};
  for (const auto& p : pairs) {
    if (p.label == Label::kHT || p.producer == system) out.pairs.push_back(p);
  }
  return out;
}

bool CorpusSplit::is_balanced() const {
  std::unordered_set<std::string> ht_ids;
  for (const auto& p : pairs) {
    if (p.label == Label::kHT && !ht_ids.insert(p.id).second) return false;
  }
  for (const auto& system : systems) {
    std::unordered_set<std::string> seen;
    for (const auto& p : pairs) {
      if (p.label != Label::kMT || p.producer != system) continue;
      if (!ht_ids.contains(p.id) || !seen.insert(p.id).second) return false;
    }
    if (seen.size() != ht_ids.size()) return false;
  }
  for (const auto& p : pairs) {
    if (p.label == Label::kMT && !systems.contains(p.producer)) return false;
  }
  return true;
}

bool is_class_balanced(std::span<const SentencePair> pairs) {
  std::size_t ht = 0;
  for (const auto& p : pairs) ht += p.label == Label::kHT;
  return 2 * ht == pairs.size();
}

namespace {

std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 20) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

void check_lang_pair(const SentencePair& p, const LangPair& expected) {
  if (p.lang_pair() != expected) {
    throw Error(ErrorKind::kValidation, "pair " + p.key() + " has language pair " +
                                            p.lang_pair().str() + ", expected " + expected.str());
  }
}

}  // namespace

CorpusSplit build_balanced_split(std::vector<SentencePair> ht,
                                 std::map<std::string, std::vector<SentencePair>> mt_by_system,
                                 SplitName name) {
  if (ht.empty()) throw Error(ErrorKind::kPrecondition, "no HT items to balance");
  const LangPair lp = ht.front().lang_pair();

  std::unordered_map<std::string, std::size_t> ht_index;
  for (std::size_t i = 0; i < ht.size(); ++i) {
    validate(ht[i]);
    if (ht[i].label != Label::kHT) {
      throw Error(ErrorKind::kValidation, "pair " + ht[i].key() + " in the HT list is labeled MT");
    }
    check_lang_pair(ht[i], lp);
    if (!ht_index.emplace(ht[i].id, i).second) {
      throw Error(ErrorKind::kDuplication, "duplicate HT source id " + ht[i].id);
    }
  }

  // sibling[system][ht position] -> MT item
  std::map<std::string, std::vector<const SentencePair*>> sibling;
  for (const auto& [system, items] : mt_by_system) {
    auto& row = sibling[system];
    row.assign(ht.size(), nullptr);
    std::vector<std::string> unknown;
    for (const auto& mt : items) {
      validate(mt);
      if (mt.label != Label::kMT || mt.producer != system) {
        throw Error(ErrorKind::kValidation,
                    "pair " + mt.key() + " listed under system " + system +
                        " must be MT with producer " + system);
      }
      check_lang_pair(mt, lp);
      const auto it = ht_index.find(mt.id);
      if (it == ht_index.end()) {
        unknown.push_back(mt.id);
        continue;
      }
      if (row[it->second] != nullptr) {
        throw Error(ErrorKind::kDuplication,
                    "duplicate source id " + mt.id + " for system " + system);
      }
      row[it->second] = &mt;
    }
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < ht.size(); ++i) {
      if (row[i] == nullptr) missing.push_back(ht[i].id);
    }
    if (!missing.empty()) {
      throw Error(ErrorKind::kCoverage, "system " + system +
                                            " lacks translations for source ids: " +
                                            join_ids(missing));
    }
    if (!unknown.empty()) {
      throw Error(ErrorKind::kCoverage, "system " + system +
                                            " has translations for unknown source ids: " +
                                            join_ids(unknown));
    }
  }

  CorpusSplit split;
  split.name = name;
  split.lang_pair = lp;
  split.pairs.reserve(ht.size() * (1 + sibling.size()));
  for (const auto& [system, row] : sibling) split.systems.insert(system);
  for (std::size_t i = 0; i < ht.size(); ++i) {
    split.pairs.push_back(ht[i]);
    for (const auto& [system, row] : sibling) split.pairs.push_back(*row[i]);
  }
  return split;
}

CorpusSplit split_from_pairs(std::vector<SentencePair> pairs, SplitName name) {
  std::vector<SentencePair> ht;
  std::map<std::string, std::vector<SentencePair>> mt;
  for (auto& p : pairs) {
    if (p.label == Label::kHT) {
      ht.push_back(std::move(p));
    } else {
      auto& bucket = mt[p.producer];
      bucket.push_back(std::move(p));
    }
  }
  return build_balanced_split(std::move(ht), std::move(mt), name);
}

namespace {

// Index of MT siblings: (system position, HT position) -> pair index in split.
struct SiblingIndex {
  std::vector<std::string> systems;
  std::vector<std::size_t> ht_positions;           // indices of HT items
  std::vector<std::vector<std::size_t>> by_system;  // [system][ht ordinal]
};

SiblingIndex index_siblings(const CorpusSplit& split) {
  if (split.systems.empty()) throw Error(ErrorKind::kPrecondition, "split has no MT systems");
  if (!split.is_balanced()) throw Error(ErrorKind::kPrecondition, "split is not balanced");
  SiblingIndex idx;
  idx.systems.assign(split.systems.begin(), split.systems.end());
  std::unordered_map<std::string, std::size_t> ordinal;
  for (std::size_t i = 0; i < split.pairs.size(); ++i) {
    if (split.pairs[i].label == Label::kHT) {
      ordinal.emplace(split.pairs[i].id, idx.ht_positions.size());
      idx.ht_positions.push_back(i);
    }
  }
  idx.by_system.assign(idx.systems.size(), std::vector<std::size_t>(idx.ht_positions.size()));
  for (std::size_t s = 0; s < idx.systems.size(); ++s) {
    for (std::size_t i = 0; i < split.pairs.size(); ++i) {
      const auto& p = split.pairs[i];
      if (p.label == Label::kMT && p.producer == idx.systems[s]) {
        idx.by_system[s][ordinal.at(p.id)] = i;
      }
    }
  }
  return idx;
}

// Appends HT item `ordinal` and one uniformly drawn MT sibling.
std::size_t append_unit(const CorpusSplit& split, const SiblingIndex& idx,
                        std::size_t ordinal, rng::Engine& engine,
                        std::vector<SentencePair>& out) {
  std::uniform_int_distribution<std::size_t> pick(0, idx.systems.size() - 1);
  const std::size_t s = idx.systems.size() == 1 ? 0 : pick(engine);
  out.push_back(split.pairs[idx.ht_positions[ordinal]]);
  out.push_back(split.pairs[idx.by_system[s][ordinal]]);
  return s;
}

}  // namespace

EpochSample sample_multi_mt_epoch(const CorpusSplit& split, std::size_t epoch,
                                  std::uint64_t seed) {
  const auto idx = index_siblings(split);
  auto engine = rng::stream(seed, "multi-mt", epoch);
  EpochSample sample;
  sample.epoch_index = epoch;
  sample.seed = seed;
  sample.pairs.reserve(2 * idx.ht_positions.size());
  sample.system_assignment.reserve(idx.ht_positions.size());
  for (std::size_t k = 0; k < idx.ht_positions.size(); ++k) {
    const auto s = append_unit(split, idx, k, engine, sample.pairs);
    sample.system_assignment.push_back(idx.systems[s]);
  }
  return sample;
}

CorpusSplit freeze_dev_multi_mt(const CorpusSplit& split, std::uint64_t seed) {
  if (split.name != SplitName::kDev) {
    throw Error(ErrorKind::kPrecondition, "freezing requires a dev split, got " +
                                              std::string(to_string(split.name)));
  }
  const auto idx = index_siblings(split);
  auto engine = rng::stream(seed, "dev-freeze");
  CorpusSplit out;
  out.name = SplitName::kDev;
  out.lang_pair = split.lang_pair;
  for (std::size_t k = 0; k < idx.ht_positions.size(); ++k) {
    const auto s = append_unit(split, idx, k, engine, out.pairs);
    out.systems.insert(idx.systems[s]);
  }
  return out;
}

void persist_frozen_dev(const CorpusSplit& dev, std::uint64_t seed,
                        const std::filesystem::path& path) {
  write_corpus(path, dev.pairs);
  ordered_json meta;
  meta["kind"] = "frozen-dev";
  meta["sampling_seed"] = seed;
  meta["lang_pair"] = dev.lang_pair.str();
  meta["items"] = dev.pairs.size();
  meta["systems"] = std::vector<std::string>(dev.systems.begin(), dev.systems.end());
  std::ofstream out(path.string() + ".meta.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write metadata for " + path.string());
  out << meta.dump(2) << '\n';
}

LanguageWeights LanguageWeights::from_sizes(const std::map<LangPair, std::size_t>& sizes,
                                            double inv_temperature) {
  const double sum = std::accumulate(sizes.begin(), sizes.end(), 0.0,
                                     [](double acc, const auto& kv) { return acc + kv.second; });
  if (sum <= 0) throw Error(ErrorKind::kPrecondition, "language sizes sum to zero");
  LanguageWeights w;
  w.inv_temperature = inv_temperature;
  for (const auto& [lp, n] : sizes) w.proportions[lp] = static_cast<double>(n) / sum;
  return w;
}

std::map<LangPair, double> LanguageWeights::sampling_weights() const {
  if (!(inv_temperature > 0.0)) {
    throw Error(ErrorKind::kDomain, "inverse temperature must be positive");
  }
  if (proportions.empty()) throw Error(ErrorKind::kPrecondition, "no language proportions");
  double total = 0.0;
  for (const auto& [lp, p] : proportions) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::kDomain, "proportion for " + lp.str() + " outside (0, 1]");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::kDomain, "language proportions do not sum to 1");
  }
  std::map<LangPair, double> out;
  double norm = 0.0;
  for (const auto& [lp, p] : proportions) norm += out[lp] = std::pow(p, inv_temperature);
  for (auto& [lp, w] : out) w /= norm;
  return out;
}

EpochSample sample_multilingual_epoch(const std::map<LangPair, CorpusSplit>& splits,
                                      const LanguageWeights& weights, std::size_t epoch,
                                      std::uint64_t seed, std::optional<std::size_t> total) {
  if (splits.empty()) throw Error(ErrorKind::kPrecondition, "no language splits given");
  const auto w = weights.sampling_weights();
  const auto& systems = splits.begin()->second.systems;
  std::size_t default_total = 0;
  std::vector<LangPair> langs;
  std::vector<double> probs;
  std::vector<SiblingIndex> indices;
  for (const auto& [lp, split] : splits) {
    if (split.systems != systems) {
      throw Error(ErrorKind::kPrecondition, "language " + lp.str() + " has a different MT system set");
    }
    const auto it = w.find(lp);
    if (it == w.end()) throw Error(ErrorKind::kPrecondition, "no weight for language " + lp.str());
    langs.push_back(lp);
    probs.push_back(it->second);
    indices.push_back(index_siblings(split));
    default_total += indices.back().ht_positions.size();
  }
  if (w.size() != splits.size()) {
    throw Error(ErrorKind::kPrecondition, "weights name languages without a split");
  }
  const std::size_t n = total.value_or(default_total);
  if (n == 0) throw Error(ErrorKind::kPrecondition, "epoch total must be positive");

  EpochSample sample;
  sample.epoch_index = epoch;
  sample.seed = seed;

  std::vector<std::size_t> counts(langs.size(), 0);
  {
    auto engine = rng::stream(seed, "multilingual-counts", epoch);
    std::discrete_distribution<std::size_t> draw(probs.begin(), probs.end());
    for (std::size_t i = 0; i < n; ++i) ++counts[draw(engine)];
  }

  for (std::size_t l = 0; l < langs.size(); ++l) {
    sample.language_counts[langs[l]] = counts[l];
    if (counts[l] == 0) continue;
    const auto& split = splits.at(langs[l]);
    const auto& idx = indices[l];
    const std::size_t available = idx.ht_positions.size();
    auto engine = rng::stream(seed, "multilingual-units/" + langs[l].str(), epoch);
    std::vector<std::size_t> chosen;
    if (counts[l] <= available) {
      chosen.resize(available);
      std::iota(chosen.begin(), chosen.end(), 0);
      std::shuffle(chosen.begin(), chosen.end(), engine);
      chosen.resize(counts[l]);
      std::sort(chosen.begin(), chosen.end());
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, available - 1);
      chosen.reserve(counts[l]);
      for (std::size_t i = 0; i < counts[l]; ++i) chosen.push_back(pick(engine));
    }
    auto mt_engine = rng::stream(seed, "multilingual-mt/" + langs[l].str(), epoch);
    for (const auto ordinal : chosen) append_unit(split, idx, ordinal, mt_engine, sample.pairs);
  }
  return sample;
}

}  // namespace smatd
