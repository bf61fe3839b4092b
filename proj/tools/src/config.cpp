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
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "smatd/cli/commands.hpp"
#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"

namespace smatd::cli {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::kUsage, "config key '" + std::string(key) + "': not a number: '" +
                                       std::string(value) + "'");
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_paths(const std::vector<std::filesystem::path>& paths) {
  std::string out;
  for (const auto& p : paths) {
    if (!out.empty()) out += ",";
    out += p.string();
  }
  return out;
}

}  // namespace

int exit_code_for(const Error& error) {
  switch (error.kind()) {
    case ErrorKind::kCapability:
    case ErrorKind::kInput:
      return kExitPartial;
    case ErrorKind::kNumeric:
    case ErrorKind::kTraining:
    case ErrorKind::kSampler:
      return kExitCompute;
    default:
      return kExitUsage;
  }
}

std::string_view to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::kSmatd: return "smatd";
    case ExperimentMode::kSmatdPlusLm: return "smatd_plus_lm";
    case ExperimentMode::kLmBaseline: return "lm_baseline";
    case ExperimentMode::kMlmBaseline: return "mlm_baseline";
  }
  return "smatd";
}

std::string_view to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::kSingle: return "single";
    case SamplingMode::kMultiMt: return "multi_mt";
    case SamplingMode::kMultilingual: return "multilingual";
  }
  return "single";
}

ExperimentMode parse_experiment_mode(std::string_view text) {
  for (auto m : {ExperimentMode::kSmatd, ExperimentMode::kSmatdPlusLm, ExperimentMode::kLmBaseline,
                 ExperimentMode::kMlmBaseline}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorKind::kUsage, "unknown mode '" + std::string(text) + "'");
}

SamplingMode parse_sampling_mode(std::string_view text) {
  for (auto m : {SamplingMode::kSingle, SamplingMode::kMultiMt, SamplingMode::kMultilingual}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorKind::kUsage, "unknown sampling mode '" + std::string(text) + "'");
}

ExperimentConfig ExperimentConfig::parse(std::string_view text,
                                         const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  std::set<std::string> seen;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  auto paths = [&](std::string_view v) {
    std::vector<std::filesystem::path> out;
    for (const auto& p : split_list(v)) out.push_back(resolve(p));
    return out;
  };

  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kUsage, "expected 'key = value'", lineno);
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw Error(ErrorKind::kUsage, "duplicate config key '" + key + "'", lineno);
    }
    auto& d = c.detector;
    auto& t = c.train_config;
    if (key == "mode") c.mode = parse_experiment_mode(value);
    else if (key == "sampling") c.sampling = parse_sampling_mode(value);
    else if (key == "train") c.train = paths(value);
    else if (key == "dev") c.dev = paths(value);
    else if (key == "test") c.test = paths(value);
    else if (key == "surrogate") c.surrogate = std::string(value);
    else if (key == "block") c.block = parse_number<int>(key, value);
    else if (key == "lm") {
      // Checkpoint directories resolve like paths; model ids pass through.
      const std::string v(value);
      c.lm = v.find(':') == std::string::npos ? resolve(v).string() : v;
    }
    else if (key == "output") c.output = resolve(std::string(value));
    else if (key == "cache") c.cache = resolve(std::string(value));
    else if (key == "inv_temperature") c.inv_temperature = parse_number<double>(key, value);
    else if (key == "epoch_units") c.epoch_units = parse_number<std::size_t>(key, value);
    else if (key == "dev_seed") c.dev_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "detector.d_model") d.d_model = parse_number<int>(key, value);
    else if (key == "detector.layers") d.layers = parse_number<int>(key, value);
    else if (key == "detector.heads") d.heads = parse_number<int>(key, value);
    else if (key == "detector.ffn_dim") d.ffn_dim = parse_number<int>(key, value);
    else if (key == "detector.dropout") d.dropout = parse_number<double>(key, value);
    else if (key == "detector.pos_dropout") d.pos_dropout = parse_number<double>(key, value);
    else if (key == "detector.max_positions") d.max_positions = parse_number<int>(key, value);
    else if (key == "detector.stochastic_depth_p") d.stochastic_depth_p = parse_number<double>(key, value);
    else if (key == "detector.threshold") d.threshold = parse_number<double>(key, value);
    else if (key == "train.learning_rate") t.learning_rate = parse_number<double>(key, value);
    else if (key == "train.warmup_steps") t.warmup_steps = parse_number<std::uint64_t>(key, value);
    else if (key == "train.patience") t.patience_epochs = parse_number<int>(key, value);
    else if (key == "train.batch_size") t.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "train.max_epochs") t.max_epochs = parse_number<int>(key, value);
    else if (key == "train.weight_decay") t.weight_decay = parse_number<double>(key, value);
    else if (key == "train.seeds") {
      t.seeds.clear();
      for (const auto& s : split_list(value)) t.seeds.push_back(parse_number<std::uint64_t>(key, s));
    } else {
      throw Error(ErrorKind::kUsage, "unknown config key '" + key + "'", lineno);
    }
  }
  if (!seen.contains("output")) c.output = resolve(c.output.string());
  const bool baseline = c.mode == ExperimentMode::kLmBaseline || c.mode == ExperimentMode::kMlmBaseline;
  if (baseline && !seen.contains("train.learning_rate")) {
    c.train_config.learning_rate = TrainConfig::lm_defaults().learning_rate;
  }
  c.digest = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(rng::fnv1a(c.canonical())));
    return std::string(buf);
  }();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return parse(io::read_text(path), path.parent_path());
}

void ExperimentConfig::validate() const {
  const bool baseline = mode == ExperimentMode::kLmBaseline || mode == ExperimentMode::kMlmBaseline;
  if (train.empty()) throw Error(ErrorKind::kUsage, "config key 'train' is required");
  if (dev.empty()) throw Error(ErrorKind::kUsage, "config key 'dev' is required");
  if (!baseline && surrogate.empty()) {
    throw Error(ErrorKind::kUsage, "config key 'surrogate' is required for mode " +
                                       std::string(to_string(mode)));
  }
  if (mode == ExperimentMode::kSmatdPlusLm && !lm) {
    throw Error(ErrorKind::kUsage, "mode smatd_plus_lm requires config key 'lm'");
  }
  if (baseline && !lm) {
    throw Error(ErrorKind::kUsage, "mode " + std::string(to_string(mode)) +
                                       " requires config key 'lm' (initial LM id)");
  }
  if (sampling == SamplingMode::kMultilingual) {
    if (train.size() < 2) {
      throw Error(ErrorKind::kUsage, "multilingual sampling requires at least 2 train datasets");
    }
    if (!(inv_temperature > 0.0)) {
      throw Error(ErrorKind::kUsage, "config key 'inv_temperature' must be positive");
    }
  } else if (train.size() != 1 || dev.size() != 1) {
    throw Error(ErrorKind::kUsage, "sampling " + std::string(to_string(sampling)) +
                                       " takes exactly one train and one dev dataset");
  }
  if (block < 0) throw Error(ErrorKind::kUsage, "config key 'block' must be >= 0");
  if (train_config.seeds.empty()) throw Error(ErrorKind::kUsage, "config key 'train.seeds' is empty");
  const auto& d = detector;
  if (d.d_model <= 0 || d.layers <= 0 || d.heads <= 0 || d.ffn_dim <= 0 || d.max_positions <= 0 ||
      d.d_model % d.heads != 0) {
    throw Error(ErrorKind::kUsage, "detector sizes must be positive with d_model divisible by heads");
  }
  if (!(d.threshold > 0.0 && d.threshold < 1.0)) {
    throw Error(ErrorKind::kUsage, "config key 'detector.threshold' must lie in (0, 1)");
  }
  if (!(d.stochastic_depth_p >= 0.0 && d.stochastic_depth_p <= 1.0)) {
    throw Error(ErrorKind::kUsage, "config key 'detector.stochastic_depth_p' must lie in [0, 1]");
  }
  try {
    train_config.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kUsage, e.what());
  }
}

std::filesystem::path ExperimentConfig::cache_root() const {
  if (cache) return *cache;
  return ExtractionCache::from_environment(output / "cache").root();
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  const auto& d = detector;
  const auto& t = train_config;
  kv["mode"] = to_string(mode);
  kv["sampling"] = to_string(sampling);
  kv["train"] = join_paths(train);
  kv["dev"] = join_paths(dev);
  kv["test"] = join_paths(test);
  kv["surrogate"] = surrogate;
  kv["block"] = std::to_string(block);
  kv["lm"] = lm.value_or("");
  kv["inv_temperature"] = fmt_double(inv_temperature);
  kv["epoch_units"] = epoch_units ? std::to_string(*epoch_units) : "";
  kv["dev_seed"] = std::to_string(dev_seed);
  kv["detector.d_model"] = std::to_string(d.d_model);
  kv["detector.layers"] = std::to_string(d.layers);
  kv["detector.heads"] = std::to_string(d.heads);
  kv["detector.ffn_dim"] = std::to_string(d.ffn_dim);
  kv["detector.dropout"] = fmt_double(d.dropout);
  kv["detector.pos_dropout"] = fmt_double(d.pos_dropout);
  kv["detector.max_positions"] = std::to_string(d.max_positions);
  kv["detector.stochastic_depth_p"] = fmt_double(d.stochastic_depth_p);
  kv["detector.threshold"] = fmt_double(d.threshold);
  kv["train.learning_rate"] = fmt_double(t.learning_rate);
  kv["train.warmup_steps"] = std::to_string(t.warmup_steps);
  kv["train.patience"] = std::to_string(t.patience_epochs);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.max_epochs"] = std::to_string(t.max_epochs);
  kv["train.weight_decay"] = fmt_double(t.weight_decay);
  std::string seeds;
  for (auto s : t.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  kv["train.seeds"] = seeds;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace smatd::cli
