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
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "smatd/cli/commands.hpp"
#include "smatd/corpus.hpp"
#include "smatd/evaluation.hpp"
#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"
#include "smatd/training.hpp"

namespace smatd::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Cache key: the pair key plus a digest of the texts, so an edited corpus
// never reuses stale states.
std::string cache_key(const PairView& pair, std::string_view base) {
  std::uint64_t h = rng::fnv1a(pair.src_lang);
  for (auto part : {pair.tgt_lang, pair.source, pair.target}) {
    h = rng::fnv1a("\x1f", 1, h);
    h = rng::fnv1a(part, h);
  }
  return std::string(base) + "#" + hex16(h).substr(0, 8);
}

bool is_baseline(ExperimentMode m) {
  return m == ExperimentMode::kLmBaseline || m == ExperimentMode::kMlmBaseline;
}

std::string join(const std::set<std::string>& items, char sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

template <typename T>
std::vector<T> concat(const std::vector<std::vector<T>>& parts) {
  std::vector<T> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

void write_json(const fs::path& path, const json& j) { io::write_text_atomic(path, j.dump(2) + "\n"); }

CorpusSplit load_split(const fs::path& path, SplitName name) {
  return split_from_pairs(load_corpus(path), name);
}

// Development data is fixed before training: a multi-system dev split gets
// one pre-sampled MT sibling per HT item, persisted next to the outputs.
CorpusSplit prepare_dev(const ExperimentConfig& cfg, std::ostream& log) {
  std::vector<SentencePair> pairs;
  std::optional<LangPair> lp;
  bool mixed = false;
  for (std::size_t i = 0; i < cfg.dev.size(); ++i) {
    auto split = load_split(cfg.dev[i], SplitName::kDev);
    if (split.systems.size() > 1) {
      split = freeze_dev_multi_mt(split, cfg.dev_seed);
      const auto frozen = cfg.output / ("dev_frozen_" + std::to_string(i) + ".jsonl");
      fs::create_directories(cfg.output);
      persist_frozen_dev(split, cfg.dev_seed, frozen);
      log << "dev: froze " << cfg.dev[i].string() << " -> " << frozen.string() << "\n";
    }
    if (lp && *lp != split.lang_pair) mixed = true;
    lp = split.lang_pair;
    pairs.insert(pairs.end(), split.pairs.begin(), split.pairs.end());
  }
  CorpusSplit dev;
  dev.name = SplitName::kDev;
  dev.lang_pair = mixed ? LangPair{"*", "*"} : *lp;
  for (const auto& p : pairs) {
    if (p.label == Label::kMT) dev.systems.insert(p.producer);
  }
  dev.pairs = std::move(pairs);
  return dev;
}

std::vector<SentencePair> load_test(const ExperimentConfig& cfg) {
  std::vector<std::vector<SentencePair>> parts;
  for (const auto& p : cfg.test) parts.push_back(load_corpus(p));
  return concat(parts);
}

struct TrainingData {
  std::vector<CorpusSplit> splits;  // one per train file
  std::vector<SentencePair> pool;   // concatenation, pool order
  std::unordered_map<std::string, std::size_t> index;  // key -> pool index
};

TrainingData load_training(const ExperimentConfig& cfg) {
  TrainingData data;
  std::set<LangPair> langs;
  for (const auto& path : cfg.train) {
    auto split = load_split(path, SplitName::kTrain);
    if (cfg.sampling == SamplingMode::kMultilingual && !langs.insert(split.lang_pair).second) {
      throw Error(ErrorKind::kUsage, "two train datasets share language pair " +
                                         split.lang_pair.str());
    }
    if (cfg.sampling == SamplingMode::kSingle && split.systems.size() != 1) {
      throw Error(ErrorKind::kUsage, "single sampling expects one MT system in " + path.string() +
                                         " (found " + std::to_string(split.systems.size()) + ")");
    }
    for (const auto& p : split.pairs) {
      data.index.emplace(p.key(), data.pool.size());
      data.pool.push_back(p);
    }
    data.splits.push_back(std::move(split));
  }
  return data;
}

EpochSelector make_selector(const ExperimentConfig& cfg, const TrainingData& data,
                            std::uint64_t seed) {
  auto to_indices = [&data](const std::vector<SentencePair>& pairs) {
    std::vector<std::size_t> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(data.index.at(p.key()));
    return out;
  };
  switch (cfg.sampling) {
    case SamplingMode::kSingle:
      return {};
    case SamplingMode::kMultiMt: {
      if (data.splits.front().systems.size() < 2) return {};
      return [&data, seed, to_indices](std::size_t epoch) {
        return to_indices(sample_multi_mt_epoch(data.splits.front(), epoch, seed).pairs);
      };
    }
    case SamplingMode::kMultilingual: {
      auto splits = std::make_shared<std::map<LangPair, CorpusSplit>>();
      std::map<LangPair, std::size_t> sizes;
      for (const auto& s : data.splits) {
        splits->emplace(s.lang_pair, s);
        sizes[s.lang_pair] = s.ht_count();
      }
      auto weights = LanguageWeights::from_sizes(sizes, cfg.inv_temperature);
      weights.sampling_weights();  // fail early on a bad temperature
      const auto total = cfg.epoch_units;
      return [splits, weights, seed, total, to_indices](std::size_t epoch) {
        return to_indices(sample_multilingual_epoch(*splits, weights, epoch, seed, total).pairs);
      };
    }
  }
  return {};
}

std::set<std::string> langs_of(std::span<const CorpusSplit> splits) {
  std::set<std::string> out;
  for (const auto& s : splits) out.insert(s.lang_pair.str());
  return out;
}

std::set<std::string> systems_of(std::span<const CorpusSplit> splits) {
  std::set<std::string> out;
  for (const auto& s : splits) out.insert(s.systems.begin(), s.systems.end());
  return out;
}

std::unique_ptr<ToyEncoderLm> load_frozen_lm(const fs::path& dir) {
  auto lm = std::make_unique<ToyEncoderLm>(ToyEncoderLm::load(dir));
  lm->freeze();
  return lm;
}

json history_summary(const TrainingHistory& h) {
  return {{"epochs", h.epochs.size()}, {"best_epoch", h.best_epoch}};
}

template <typename M>
void write_replicate_reports(const ExperimentConfig& cfg, const ReplicateSummary<M>& summary,
                             std::span<const std::uint64_t> seeds, bool has_test) {
  for (const auto& run : summary.runs) {
    write_history_jsonl(cfg.output / ("history_seed" + std::to_string(run.seed) + ".jsonl"),
                        run.history);
  }
  std::vector<std::uint64_t> survivors;
  for (const auto& run : summary.runs) survivors.push_back(run.seed);
  io::write_text_atomic(cfg.output / "variability.json",
                        to_json(summary.variability, survivors, has_test ? "test" : "dev"));
  json reps = json::array();
  for (const auto& run : summary.runs) {
    json r{{"seed", run.seed}, {"dev_accuracy", run.dev_accuracy}};
    if (has_test) r["test_accuracy"] = run.test_accuracy;
    r["history"] = history_summary(run.history);
    reps.push_back(std::move(r));
  }
  json failures = json::array();
  for (const auto& [seed, what] : summary.failures) failures.push_back({{"seed", seed}, {"error", what}});
  json seed_list = json::array();
  for (auto s : seeds) seed_list.push_back(s);
  write_json(cfg.output / "replicates.json", {{"config_digest", cfg.digest},
                                              {"seeds", seed_list},
                                              {"selected_seed", summary.best().seed},
                                              {"replicates", reps},
                                              {"failures", failures}});
  io::write_text_atomic(cfg.output / "config.txt", cfg.canonical());
}

struct LoadedModel {
  DetectorModel model;
  DetectorModel::ArtifactInfo info;
  std::unique_ptr<SurrogateAdapter> surrogate;
  std::unique_ptr<ToyEncoderLm> lm;
};

LoadedModel load_model(const fs::path& dir) {
  DetectorModel::ArtifactInfo info;
  auto model = DetectorModel::load(dir, &info);
  auto surrogate = load_surrogate(info.surrogate_model_id);
  std::unique_ptr<ToyEncoderLm> lm;
  if (info.lm_checkpoint) lm = load_frozen_lm(*info.lm_checkpoint);
  return {std::move(model), std::move(info), std::move(surrogate), std::move(lm)};
}

ExtractionCache cache_for(const std::optional<fs::path>& explicit_root, const fs::path& fallback) {
  if (explicit_root) return ExtractionCache(*explicit_root);
  return ExtractionCache::from_environment(fallback);
}

std::string lang_label(std::span<const SentencePair> pairs) {
  std::set<std::string> langs;
  for (const auto& p : pairs) langs.insert(p.lang_pair().str());
  return join(langs, '+');
}

std::string system_label(std::span<const SentencePair> pairs) {
  std::set<std::string> systems;
  for (const auto& p : pairs) {
    if (p.label == Label::kMT) systems.insert(p.producer);
  }
  return join(systems, '+');
}

struct Prediction {
  std::string pair_id;
  bool correct = false;
};

std::vector<Prediction> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("pair_id").get<std::string>(), j.at("correct").get<bool>()});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, path.string() + ": " + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Featurizer::Featurizer(const SurrogateAdapter& surrogate, ExtractionCache cache, int block,
                       const LmAdapter* lm)
    : surrogate_(surrogate), cache_(std::move(cache)), block_(block), lm_(lm) {}

bool Featurizer::warm(const PairView& pair, std::string_view key) const {
  const auto id = cache_key(pair, key);
  const auto model_id = surrogate_.model_id();
  if (cache_.contains(id, model_id, block_)) return false;
  auto seq = surrogate_.extract_states(pair, block_);
  seq.pair_id = id;
  cache_.store(seq, model_id);
  return true;
}

DetectorExample Featurizer::build(const PairView& pair, std::string_view key, Label label) const {
  warm(pair, key);
  const auto id = cache_key(pair, key);
  auto seq = cache_.load(id, surrogate_.model_id(), block_);
  DetectorExample ex;
  ex.pair_id = std::string(key);
  ex.label = label;
  ex.states = std::move(seq.states);
  if (lm_) ex.cls = lm_->encode_pair(pair).vector;
  return ex;
}

DetectorExample Featurizer::operator()(const SentencePair& pair) const {
  return build(pair.view(), pair.key(), pair.label);
}

DetectorExample Featurizer::operator()(const UnlabeledPair& pair) const {
  const auto key = pair.id + "|" + pair.producer.value_or("unlabeled");
  return build(pair.view(), key, pair.label.value_or(Label::kHT));
}

std::vector<DetectorExample> Featurizer::all(std::span<const SentencePair> pairs) const {
  std::vector<DetectorExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back((*this)(p));
  return out;
}

// ---------------------------------------------------------------------------

int cmd_ingest_validate(const fs::path& input, std::ostream& log) {
  const auto pairs = load_corpus(input);
  std::map<std::string, std::size_t> producers;
  std::set<std::string> ht_ids, langs;
  for (const auto& p : pairs) {
    ++producers[p.producer];
    langs.insert(p.lang_pair().str());
    if (p.label == Label::kHT) ht_ids.insert(p.id);
  }
  log << input.string() << ": " << pairs.size() << " records, " << ht_ids.size()
      << " distinct HT source ids, languages " << join(langs, ',') << "\n";
  for (const auto& [producer, n] : producers) log << "  " << producer << ": " << n << "\n";
  try {
    const auto split = split_from_pairs(pairs, SplitName::kTrain);
    log << "balanced: yes (" << split.systems.size() << " MT systems)\n";
  } catch (const Error& e) {
    log << "balanced: no (" << e.what() << ")\n";
  }
  return kExitOk;
}

int cmd_extract(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.surrogate.empty()) throw Error(ErrorKind::kUsage, "config key 'surrogate' is required");
  auto surrogate = load_surrogate(cfg.surrogate);
  if (cfg.block > surrogate->num_blocks()) {
    throw Error(ErrorKind::kUsage, "block " + std::to_string(cfg.block) + " exceeds " +
                                       std::to_string(surrogate->num_blocks()));
  }
  const Featurizer features(*surrogate, ExtractionCache(cfg.cache_root()), cfg.block);
  std::size_t added = 0, cached = 0;
  std::vector<std::string> failures;
  std::set<std::string> seen;
  for (const auto& group : {cfg.train, cfg.dev, cfg.test}) {
    for (const auto& path : group) {
      for (const auto& pair : load_corpus(path)) {
        if (!seen.insert(pair.key()).second) continue;
        try {
          (features.warm(pair.view(), pair.key()) ? added : cached) += 1;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kCapability && e.kind() != ErrorKind::kInput) throw;
          failures.push_back(pair.key() + ": " + e.what());
        }
      }
    }
  }
  log << "extract: " << added << " new, " << cached << " cached, " << failures.size()
      << " failed (block " << cfg.block << ", cache " << cfg.cache_root().string() << ")\n";
  for (const auto& f : failures) log << "  failed " << f << "\n";
  return failures.empty() ? kExitOk : kExitPartial;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (is_baseline(cfg.mode)) {
    throw Error(ErrorKind::kUsage, "mode " + std::string(to_string(cfg.mode)) +
                                       " is trained with train-lm");
  }
  auto surrogate = load_surrogate(cfg.surrogate);
  if (cfg.block > surrogate->num_blocks()) {
    throw Error(ErrorKind::kUsage, "block " + std::to_string(cfg.block) + " exceeds " +
                                       std::to_string(surrogate->num_blocks()));
  }
  std::unique_ptr<ToyEncoderLm> lm;
  if (cfg.mode == ExperimentMode::kSmatdPlusLm) lm = load_frozen_lm(*cfg.lm);

  fs::create_directories(cfg.output);
  const auto data = load_training(cfg);
  const auto dev = prepare_dev(cfg, log);
  const auto test = load_test(cfg);
  const Featurizer features(*surrogate, ExtractionCache(cfg.cache_root()), cfg.block, lm.get());
  const auto pool = features.all(data.pool);
  const auto dev_x = features.all(dev.pairs);
  const auto test_x = features.all(test);
  log << "train: " << pool.size() << " pool pairs, " << dev_x.size() << " dev, " << test_x.size()
      << " test; mode " << to_string(cfg.mode) << ", sampling " << to_string(cfg.sampling) << "\n";

  auto dcfg = cfg.detector;
  dcfg.block = cfg.block;
  dcfg.surrogate_dim = surrogate->hidden_dim();
  if (lm) dcfg.lm_dim = lm->hidden_dim();
  dcfg.validate();

  const auto& seeds = cfg.train_config.seeds;
  const auto summary = run_replicates<DetectorModel>(seeds, [&](std::uint64_t seed) {
    auto fitted = train_detector(DetectorModel(dcfg, seed), pool, dev_x, cfg.train_config, seed,
                                 make_selector(cfg, data, seed));
    Replicate<DetectorModel> r{seed, std::move(fitted.model), std::move(fitted.history)};
    r.dev_accuracy = r.history.best_dev_accuracy();
    r.test_accuracy = test_x.empty() ? r.dev_accuracy : evaluate_examples(r.model, test_x).accuracy;
    log << "  seed " << seed << ": best epoch " << r.history.best_epoch << ", dev "
        << r.dev_accuracy << (test_x.empty() ? "" : ", test " + std::to_string(r.test_accuracy))
        << "\n";
    return r;
  });
  for (const auto& [seed, what] : summary.failures) log << "  seed " << seed << " failed: " << what << "\n";

  const auto& best = summary.best();
  DetectorModel::ArtifactInfo info;
  info.surrogate_model_id = surrogate->model_id();
  if (lm) {
    info.lm_model_id = lm->model_id();
    info.lm_checkpoint = fs::absolute(*cfg.lm).lexically_normal().string();
  }
  info.training_seed = best.seed;
  info.dev_accuracy = best.dev_accuracy;
  info.best_epoch = best.history.best_epoch;
  info.config_digest = cfg.digest;
  info.train_langs = langs_of(data.splits);
  info.train_systems = systems_of(data.splits);
  best.model.save(cfg.output / "model", info);
  write_replicate_reports(cfg, summary, seeds, !test_x.empty());
  log << "selected seed " << best.seed << " -> " << (cfg.output / "model").string() << "\n";
  return summary.failures.empty() ? kExitOk : kExitCompute;
}

int cmd_train_lm(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (!is_baseline(cfg.mode)) {
    throw Error(ErrorKind::kUsage, "train-lm expects mode lm_baseline or mlm_baseline");
  }
  if (cfg.sampling != SamplingMode::kSingle) {
    throw Error(ErrorKind::kUsage, "train-lm supports sampling = single only");
  }
  auto lm_cfg = ToyLmConfig::parse(*cfg.lm);
  lm_cfg.mode = cfg.mode == ExperimentMode::kLmBaseline ? LmMode::kBilingual : LmMode::kMonolingual;
  const ToyEncoderLm base(lm_cfg);

  fs::create_directories(cfg.output);
  const auto train = load_split(cfg.train.front(), SplitName::kTrain);
  const auto dev = prepare_dev(cfg, log);
  const auto test = load_test(cfg);
  log << "train-lm: " << train.size() << " train, " << dev.size() << " dev, " << test.size()
      << " test; " << base.model_id() << "\n";

  auto test_accuracy = [&test](const ToyEncoderLm& m) {
    std::vector<Label> pred, gold;
    for (const auto& p : test) {
      pred.push_back(m.predict_label(p));
      gold.push_back(p.label);
    }
    return accuracy(pred, gold);
  };
  const auto& seeds = cfg.train_config.seeds;
  const auto summary = run_replicates<ToyEncoderLm>(seeds, [&](std::uint64_t seed) {
    auto fitted = finetune_lm(base, train, dev, cfg.train_config, seed);
    Replicate<ToyEncoderLm> r{seed, std::move(fitted.model), std::move(fitted.history)};
    r.dev_accuracy = r.history.best_dev_accuracy();
    r.test_accuracy = test.empty() ? r.dev_accuracy : test_accuracy(r.model);
    log << "  seed " << seed << ": best epoch " << r.history.best_epoch << ", dev "
        << r.dev_accuracy << "\n";
    return r;
  });
  auto selected = summary.best().model;
  selected.freeze();
  selected.save(cfg.output / "lm", {summary.best().dev_accuracy, summary.best().history.best_epoch,
                                    summary.best().seed, cfg.digest});
  write_replicate_reports(cfg, summary, seeds, !test.empty());
  log << "selected seed " << summary.best().seed << " -> " << (cfg.output / "lm").string() << "\n";
  return summary.failures.empty() ? kExitOk : kExitCompute;
}

int cmd_sweep(const ExperimentConfig& cfg, std::span<const int> blocks_in, std::ostream& log) {
  if (cfg.surrogate.empty()) throw Error(ErrorKind::kUsage, "config key 'surrogate' is required");
  if (cfg.train.empty() || cfg.train.size() != cfg.dev.size()) {
    throw Error(ErrorKind::kUsage, "sweep pairs each train dataset with one dev dataset");
  }
  if (cfg.train_config.seeds.empty()) throw Error(ErrorKind::kUsage, "config key 'train.seeds' is empty");
  cfg.train_config.validate();
  auto surrogate = load_surrogate(cfg.surrogate);
  std::vector<int> blocks(blocks_in.begin(), blocks_in.end());
  if (blocks.empty()) {
    for (int k = 0; k <= surrogate->num_blocks(); ++k) blocks.push_back(k);
  }

  struct Cell {
    CorpusSplit train, dev;
  };
  std::map<SweepCondition, Cell> cells;
  for (std::size_t i = 0; i < cfg.train.size(); ++i) {
    const auto train = load_split(cfg.train[i], SplitName::kTrain);
    const auto dev = load_split(cfg.dev[i], SplitName::kDev);
    for (const auto& system : train.systems) {
      if (!dev.systems.contains(system)) {
        throw Error(ErrorKind::kCoverage, "dev " + cfg.dev[i].string() + " lacks system " + system);
      }
      cells[{train.lang_pair, system}] = {train.restrict_to(system), dev.restrict_to(system)};
    }
  }
  std::vector<SweepCondition> conditions;
  for (const auto& [c, _] : cells) conditions.push_back(c);

  const ExtractionCache cache(cfg.cache_root());
  const auto seed = cfg.train_config.seeds.front();
  const auto result = layer_sweep(conditions, blocks, [&](const SweepCondition& c, int block) {
    const auto& cell = cells.at(c);
    const Featurizer features(*surrogate, cache, block);
    const auto train_x = features.all(cell.train.pairs);
    const auto dev_x = features.all(cell.dev.pairs);
    auto dcfg = cfg.detector;
    dcfg.block = block;
    dcfg.surrogate_dim = surrogate->hidden_dim();
    const auto fitted =
        train_detector(DetectorModel(dcfg, seed), train_x, dev_x, cfg.train_config, seed);
    const double acc = fitted.history.best_dev_accuracy();
    log << "  " << c.name() << " block " << block << ": " << acc << "\n";
    return acc;
  });
  fs::create_directories(cfg.output);
  auto j = json::parse(to_json(result));
  j["config_digest"] = cfg.digest;
  j["surrogate"] = surrogate->model_id();
  write_json(cfg.output / "sweep.json", j);
  log << "best block " << result.best_block << "\n";
  for (const auto& f : result.failures) log << "  failed " << f << "\n";
  return result.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_eval(const EvalOptions& opt, std::ostream& log) {
  auto m = load_model(opt.model_dir);
  const auto test = load_corpus(opt.test);
  const Featurizer features(*m.surrogate, cache_for(opt.cache, opt.model_dir.parent_path() / "cache"),
                            m.model.config().block, m.lm.get());

  EvalCell cell;
  cell.train_condition = opt.model_dir.filename().string();
  cell.train_langs = m.info.train_langs;
  cell.train_systems = m.info.train_systems;
  cell.eval_lang = lang_label(test);
  cell.eval_system = system_label(test);
  cell.eval_condition = cell.eval_lang + "/" + cell.eval_system;
  std::ostringstream preds;
  for (const auto& pair : test) {
    const auto score = m.model.score(features(pair));
    const bool ok = score.predicted == pair.label;
    cell.correct.push_back(ok);
    cell.correct_count += ok ? 1 : 0;
    json j{{"pair_id", pair.key()},
           {"gold", to_string(pair.label)},
           {"predicted", to_string(score.predicted)},
           {"p_ht", score.p_ht},
           {"correct", ok}};
    preds << j.dump() << "\n";
  }
  cell.n = test.size();
  if (cell.n == 0) throw Error(ErrorKind::kInput, "empty test set " + opt.test.string());
  cell.accuracy = static_cast<double>(cell.correct_count) / static_cast<double>(cell.n);
  cell.zero_shot = !m.info.train_langs.contains(cell.eval_lang);

  EvalReport report;
  report.cells.push_back(cell);
  report.metadata["model"] = opt.model_dir.string();
  report.metadata["surrogate"] = m.info.surrogate_model_id;
  report.metadata["config_digest"] = m.info.config_digest;
  report.metadata["test"] = opt.test.string();
  write_report_json(opt.report, report);
  if (opt.predictions) io::write_text_atomic(*opt.predictions, preds.str());
  log << "eval: " << cell.correct_count << "/" << cell.n << " correct, accuracy " << cell.accuracy
      << "\n";
  return kExitOk;
}

int cmd_cross_eval(const CrossEvalOptions& opt, std::ostream& log) {
  if (opt.models.empty() || opt.tests.empty()) {
    throw Error(ErrorKind::kUsage, "cross-eval needs at least one model and one test set");
  }
  std::map<std::string, LoadedModel> models;
  std::vector<TrainCondition> trains;
  for (const auto& [name, dir] : opt.models) models.emplace(name, load_model(dir));
  for (auto& [name, m] : models) {
    trains.push_back({name, m.info.train_langs, m.info.train_systems, &m.model});
  }

  std::vector<EvalCondition> tests;
  std::map<std::string, std::vector<SentencePair>> test_pairs;
  for (const auto& path : opt.tests) {
    const auto pairs = load_corpus(path);
    std::map<LangPair, std::set<std::string>> systems;
    for (const auto& p : pairs) {
      if (p.label == Label::kMT) systems[p.lang_pair()].insert(p.producer);
    }
    for (const auto& [lp, names] : systems) {
      for (const auto& system : names) {
        const auto name = lp.str() + "/" + system;
        auto& bucket = test_pairs[name];
        if (!bucket.empty()) throw Error(ErrorKind::kDuplication, "test condition " + name + " repeated");
        for (const auto& p : pairs) {
          if (p.lang_pair() == lp && (p.label == Label::kHT || p.producer == system)) bucket.push_back(p);
        }
        tests.push_back({name, lp, system});
      }
    }
  }

  const auto fallback = opt.report_json.parent_path() / "cache";
  const auto result = cross_eval(trains, tests, [&](const TrainCondition& t, const EvalCondition& e) {
    const auto& m = models.at(t.name);
    const Featurizer features(*m.surrogate, cache_for(opt.cache, fallback), m.model.config().block,
                              m.lm.get());
    return features.all(test_pairs.at(e.name));
  });

  EvalReport report;
  report.cells = result.cells;
  if (opt.baseline) {
    if (!models.contains(*opt.baseline)) {
      throw Error(ErrorKind::kUsage, "baseline '" + *opt.baseline + "' is not a model name");
    }
    std::map<std::string, const EvalCell*> base;
    for (const auto& c : result.cells) {
      if (c.train_condition == *opt.baseline) base[c.eval_condition] = &c;
    }
    for (auto& c : report.cells) {
      const auto it = base.find(c.eval_condition);
      if (c.train_condition == *opt.baseline || it == base.end()) continue;
      auto sig = approx_randomization(c.correct, it->second->correct, opt.iterations);
      sig.cell_a = c.id();
      sig.cell_b = it->second->id();
      c.p_value_vs_baseline = sig.p_value;
      report.significance.push_back(sig);
    }
  }
  for (const auto& s : result.skipped) log << "  skipped " << s << "\n";
  report.metadata["skipped"] = std::to_string(result.skipped.size());
  write_report_json(opt.report_json, report);
  if (opt.report_tsv) write_report_tsv(*opt.report_tsv, report);
  log << "cross-eval: " << report.cells.size() << " cells, " << result.skipped.size()
      << " skipped\n";
  return kExitOk;
}

int cmd_sigtest(const SigtestOptions& opt, std::ostream& log) {
  const auto a = read_predictions(opt.predictions_a);
  const auto b = read_predictions(opt.predictions_b);
  std::unordered_map<std::string, bool> by_id;
  for (const auto& p : b) {
    if (!by_id.emplace(p.pair_id, p.correct).second) {
      throw Error(ErrorKind::kDuplication, "pair " + p.pair_id + " repeated in " +
                                               opt.predictions_b.string());
    }
  }
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kInput, "prediction files cover different items (" +
                                       std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  std::vector<bool> ca, cb;
  for (const auto& p : a) {
    const auto it = by_id.find(p.pair_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::kInput, "pair " + p.pair_id + " missing from " + opt.predictions_b.string());
    }
    ca.push_back(p.correct);
    cb.push_back(it->second);
  }
  auto r = approx_randomization(ca, cb, opt.iterations, opt.seed);
  r.cell_a = opt.predictions_a.string();
  r.cell_b = opt.predictions_b.string();
  const json j{{"cell_a", r.cell_a},         {"cell_b", r.cell_b},
               {"n", ca.size()},             {"observed", r.observed},
               {"p_value", r.p_value},       {"iterations", r.iterations},
               {"seed", opt.seed},           {"significant", r.significant}};
  if (opt.output) write_json(*opt.output, j);
  log << "sigtest: |delta acc| = " << r.observed << ", p = " << r.p_value
      << (r.significant ? " (significant)" : " (not significant)") << "\n";
  return kExitOk;
}

int cmd_perplexity(const PerplexityOptions& opt, std::ostream& log) {
  auto surrogate = load_surrogate(opt.surrogate);
  const auto pairs = load_corpus(opt.input);
  std::ostringstream out;
  std::map<Label, std::vector<double>> by_label;
  for (const auto& pair : pairs) {
    const auto rec = per_word_perplexity(*surrogate, pair);
    json j{{"pair_id", rec.pair_id}, {"label", to_string(rec.label)}, {"n_tokens", rec.n_tokens}};
    j["ppl"] = std::isfinite(rec.ppl) ? json(rec.ppl) : json(nullptr);
    j["zero_probability"] = rec.zero_probability;
    out << j.dump() << "\n";
    by_label[rec.label].push_back(rec.ppl);
  }
  io::write_text_atomic(opt.output, out.str());
  for (auto& [label, values] : by_label) {
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    const double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    log << "perplexity " << to_string(label) << ": n = " << n << ", median " << median << "\n";
  }
  return kExitOk;
}

std::string FilterReport::to_json() const {
  json j;
  j["keep_rule"] = "kept iff p_ht >= threshold; keep-side = HT";
  j["input"] = input;
  j["kept"] = kept;
  j["dropped"] = dropped;
  j["dropped_unsupported"] = dropped_unsupported;
  j["threshold"] = threshold;
  j["histogram_bins"] = histogram.size();
  j["histogram"] = histogram;
  return j.dump(2) + "\n";
}

FilterReport run_filter(const FilterOptions& opt) {
  auto m = load_model(opt.model_dir);
  FilterReport report;
  report.threshold = opt.threshold.value_or(m.model.config().threshold);
  if (!(report.threshold >= 0.0 && report.threshold <= 1.0)) {
    throw Error(ErrorKind::kUsage, "threshold must lie in [0, 1]");
  }
  const auto pairs = load_unlabeled(opt.input);
  const Featurizer features(*m.surrogate,
                            cache_for(opt.cache, opt.output.parent_path() / ".smatd-cache"),
                            m.model.config().block, m.lm.get());
  std::string kept;
  for (const auto& pair : pairs) {
    ++report.input;
    if (!m.surrogate->supports_language(pair.src_lang) ||
        !m.surrogate->supports_language(pair.tgt_lang)) {
      ++report.dropped;
      ++report.dropped_unsupported;
      continue;
    }
    DetectorExample ex;
    try {
      ex = features(pair);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInput) throw;
      ++report.dropped;
      continue;
    }
    const double p = m.model.score(ex).p_ht;
    const auto bin = std::min<std::size_t>(report.histogram.size() - 1,
                                           static_cast<std::size_t>(p * report.histogram.size()));
    ++report.histogram[bin];
    if (p >= report.threshold) {
      ++report.kept;
      kept += pair.raw_line + "\n";
    } else {
      ++report.dropped;
    }
  }
  io::write_text_atomic(opt.output, kept);
  io::write_text_atomic(opt.report.value_or(fs::path(opt.output.string() + ".report.json")),
                        report.to_json());
  return report;
}

int cmd_filter(const FilterOptions& opt, std::ostream& log) {
  const auto r = run_filter(opt);
  log << "filter: " << r.input << " input, " << r.kept << " kept, " << r.dropped << " dropped ("
      << r.dropped_unsupported << " unsupported language), threshold " << r.threshold << "\n";
  return kExitOk;
}

int cmd_variability(std::span<const double> values, const std::optional<fs::path>& output,
                    std::ostream& log) {
  const auto v = variability_report(values);
  const auto text = to_json(v, {}, "input");
  if (output) io::write_text_atomic(*output, text);
  log << text;
  return kExitOk;
}

}  // namespace smatd::cli
