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
#include "smatd/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include "smatd/error.hpp"
#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"

namespace smatd {

double accuracy(std::span<const Label> predictions, std::span<const Label> gold) {
  if (predictions.size() != gold.size()) {
    throw Error(ErrorKind::kInput, "prediction and gold lengths differ (" +
                                       std::to_string(predictions.size()) + " vs " +
                                       std::to_string(gold.size()) + ")");
  }
  if (gold.empty()) throw Error(ErrorKind::kInput, "accuracy of an empty list");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predictions[i] == gold[i];
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

SignificanceResult approx_randomization(const std::vector<bool>& correct_a,
                                        const std::vector<bool>& correct_b,
                                        std::uint64_t iterations, std::uint64_t seed) {
  if (correct_a.size() != correct_b.size()) {
    throw Error(ErrorKind::kInput, "paired outcome vectors differ in length");
  }
  if (correct_a.empty()) throw Error(ErrorKind::kInput, "no paired outcomes");
  if (iterations == 0) throw Error(ErrorKind::kInput, "iterations must be positive");

  // Only discordant items change under a swap; each contributes +1 (a right)
  // or -1 (b right) to the difference of correct counts.
  std::vector<int> discordant;
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    if (correct_a[i] != correct_b[i]) discordant.push_back(correct_a[i] ? 1 : -1);
  }
  const long observed = std::labs(std::accumulate(discordant.begin(), discordant.end(), 0L));

  std::uint64_t at_least = 0;
  for (std::uint64_t it = 0; it < iterations; ++it) {
    auto engine = rng::stream(seed, "approx-randomization", it);
    long diff = 0;
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < discordant.size(); ++k) {
      if (k % 64 == 0) bits = engine();
      diff += (bits & 1U) ? -discordant[k] : discordant[k];
      bits >>= 1U;
    }
    at_least += std::labs(diff) >= observed;
  }

  SignificanceResult r;
  r.observed = static_cast<double>(observed) / static_cast<double>(correct_a.size());
  r.iterations = iterations;
  r.p_value = static_cast<double>(at_least + 1) / static_cast<double>(iterations + 1);
  r.significant = r.p_value < kSignificanceLevel;
  return r;
}

RunVariability variability_report(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::kInput, "variability of an empty list");
  RunVariability v;
  v.n_runs = values.size();
  v.min = *std::min_element(values.begin(), values.end());
  v.max = *std::max_element(values.begin(), values.end());
  v.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() == 1) {
    v.sd = 0.0;
    v.sd_defined = false;
    return v;
  }
  double ss = 0.0;
  for (const double x : values) ss += (x - v.mean) * (x - v.mean);
  v.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return v;
}

LayerSweepResult layer_sweep(std::span<const SweepCondition> conditions,
                             std::span<const int> blocks, const SweepCellFn& cell) {
  if (conditions.empty() || blocks.empty()) {
    throw Error(ErrorKind::kInput, "layer sweep needs at least one condition and one block");
  }
  std::vector<int> ordered(blocks.begin(), blocks.end());
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

  LayerSweepResult r;
  for (const auto& condition : conditions) {
    for (const int block : ordered) {
      try {
        r.accuracy[condition.name()][block] = cell(condition, block);
      } catch (const std::exception& e) {
        r.failures.push_back(condition.name() + " block " + std::to_string(block) + ": " + e.what());
      }
    }
  }
  // Summation walks conditions in name order, so the aggregate does not
  // depend on the order `conditions` was given in.
  for (const int block : ordered) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [name, per_block] : r.accuracy) {
      if (const auto it = per_block.find(block); it != per_block.end()) {
        sum += it->second;
        ++count;
      }
    }
    if (count > 0) r.aggregate[block] = sum / static_cast<double>(count);
  }
  if (r.aggregate.empty()) throw Error(ErrorKind::kTraining, "every sweep cell failed");

  double best = -1.0;
  for (const auto& [block, acc] : r.aggregate) {
    if (acc > best) {
      best = acc;
      r.best_block = block;
    }
  }
  for (const auto& [name, per_block] : r.accuracy) {
    const auto ref = per_block.find(r.best_block);
    if (ref == per_block.end()) continue;
    for (const auto& [block, acc] : per_block) r.delta_to_best[name][block] = acc - ref->second;
  }

  std::vector<double> agg;
  for (const auto& [block, acc] : r.aggregate) agg.push_back(acc);
  const auto stats = variability_report(agg);
  r.aggregate_mean = stats.mean;
  r.aggregate_sd = stats.sd;
  std::sort(agg.begin(), agg.end());
  const std::size_t m = agg.size();
  r.aggregate_median = m % 2 ? agg[m / 2] : 0.5 * (agg[m / 2 - 1] + agg[m / 2]);
  return r;
}

EvalCell evaluate_examples(const DetectorModel& model, std::span<const DetectorExample> examples) {
  if (examples.empty()) throw Error(ErrorKind::kInput, "no examples to evaluate");
  EvalCell cell;
  cell.n = examples.size();
  cell.correct.reserve(examples.size());
  for (const auto& ex : examples) {
    const bool ok = model.score(ex).predicted == ex.label;
    cell.correct.push_back(ok);
    cell.correct_count += ok;
  }
  cell.accuracy = static_cast<double>(cell.correct_count) / static_cast<double>(cell.n);
  return cell;
}

CrossEvalResult cross_eval(std::span<const TrainCondition> models,
                           std::span<const EvalCondition> tests, const FeatureFn& features) {
  CrossEvalResult out;
  for (const auto& m : models) {
    if (m.model == nullptr) throw Error(ErrorKind::kUsage, "train condition " + m.name + " has no model");
    for (const auto& t : tests) {
      const std::string id = m.name + "@" + t.name;
      try {
        const auto examples = features(m, t);
        EvalCell cell = evaluate_examples(*m.model, examples);
        cell.train_condition = m.name;
        cell.train_langs = m.langs;
        cell.train_systems = m.systems;
        cell.eval_condition = t.name;
        cell.eval_lang = t.lang_pair.str();
        cell.eval_system = t.system;
        cell.zero_shot = !m.systems.contains(t.system) || !m.langs.contains(cell.eval_lang);
        out.cells.push_back(std::move(cell));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kDimension) {
          out.skipped.push_back(id + ": " + std::string(to_string(ErrorKind::kConfiguration)) +
                                ": " + e.what());
        } else if (e.kind() == ErrorKind::kCapability || e.kind() == ErrorKind::kConfiguration) {
          out.skipped.push_back(id + ": " + e.what());
        } else {
          throw;
        }
      }
    }
  }
  return out;
}

namespace {

std::string join(const std::set<std::string>& items, char sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out.push_back(sep);
    out += s;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

nlohmann::ordered_json cell_json(const EvalCell& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id();
  j["train_condition"] = c.train_condition;
  j["train_langs"] = std::vector<std::string>(c.train_langs.begin(), c.train_langs.end());
  j["train_systems"] = std::vector<std::string>(c.train_systems.begin(), c.train_systems.end());
  j["eval_condition"] = c.eval_condition;
  j["eval_lang"] = c.eval_lang;
  j["eval_system"] = c.eval_system;
  j["n"] = c.n;
  j["correct"] = c.correct_count;
  j["accuracy"] = c.accuracy;
  j["zero_shot"] = c.zero_shot;
  j["p_value_vs_baseline"] = c.p_value_vs_baseline ? nlohmann::ordered_json(*c.p_value_vs_baseline)
                                                   : nlohmann::ordered_json(nullptr);
  return j;
}

}  // namespace

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : report.cells) j["cells"].push_back(cell_json(c));
  j["significance"] = nlohmann::ordered_json::array();
  for (const auto& s : report.significance) {
    j["significance"].push_back({{"cell_a", s.cell_a},
                                 {"cell_b", s.cell_b},
                                 {"observed", s.observed},
                                 {"p_value", s.p_value},
                                 {"iterations", s.iterations},
                                 {"significant", s.significant}});
  }
  auto meta = nlohmann::ordered_json::object();
  meta["significance_test"] =
      "approximate randomization, two-sided |acc_a - acc_b|, add-one smoothing, p < 0.05";
  for (const auto& [k, v] : report.metadata) meta[k] = v;
  j["metadata"] = std::move(meta);
  io::write_text_atomic(path, j.dump(2) + "\n");
}

void write_report_tsv(const std::filesystem::path& path, const EvalReport& report) {
  std::ostringstream out;
  out << "train_langs\ttrain_systems\teval_lang\teval_system\tn\taccuracy\tzero_shot\t"
         "p_value_vs_baseline\n";
  for (const auto& c : report.cells) {
    out << join(c.train_langs, '+') << '\t' << join(c.train_systems, '+') << '\t' << c.eval_lang
        << '\t' << c.eval_system << '\t' << c.n << '\t' << format_double(c.accuracy) << '\t'
        << (c.zero_shot ? "true" : "false") << '\t'
        << (c.p_value_vs_baseline ? format_double(*c.p_value_vs_baseline) : "") << '\n';
  }
  io::write_text_atomic(path, out.str());
}

std::string to_json(const RunVariability& v, std::span<const std::uint64_t> seeds,
                    std::string_view split) {
  nlohmann::ordered_json j;
  j["min"] = v.min;
  j["mean"] = v.mean;
  j["max"] = v.max;
  j["sd"] = v.sd;
  j["n_runs"] = v.n_runs;
  j["sd_defined"] = v.sd_defined;
  j["seeds"] = std::vector<std::uint64_t>(seeds.begin(), seeds.end());
  j["split"] = std::string(split);
  return j.dump(2);
}

std::string to_json(const LayerSweepResult& sweep) {
  nlohmann::ordered_json j;
  auto per_block = [](const std::map<int, double>& m) {
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (const auto& [b, v] : m) o[std::to_string(b)] = v;
    return o;
  };
  j["best_block"] = sweep.best_block;
  j["aggregate"] = per_block(sweep.aggregate);
  j["aggregate_median"] = sweep.aggregate_median;
  j["aggregate_mean"] = sweep.aggregate_mean;
  j["aggregate_sd"] = sweep.aggregate_sd;
  j["accuracy"] = nlohmann::ordered_json::object();
  for (const auto& [name, m] : sweep.accuracy) j["accuracy"][name] = per_block(m);
  j["delta_to_best"] = nlohmann::ordered_json::object();
  for (const auto& [name, m] : sweep.delta_to_best) j["delta_to_best"][name] = per_block(m);
  j["failures"] = sweep.failures;
  return j.dump(2);
}

}  // namespace smatd
