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
#include "smatd/surrogate.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include "smatd/error.hpp"
#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"

namespace smatd {

PerplexityValue perplexity_from_log_probs(std::span<const double> log_probs) {
  if (log_probs.empty()) throw Error(ErrorKind::kInput, "no scored tokens");
  double sum = 0.0;
  for (const double lp : log_probs) {
    if (lp == -std::numeric_limits<double>::infinity()) {
      return {std::numeric_limits<double>::infinity(), true};
    }
    sum += lp;
  }
  return {std::exp(-sum / static_cast<double>(log_probs.size())), false};
}

// SurrogateAdapter -----------------------------------------------------------

void SurrogateAdapter::check_languages(const PairView& pair) const {
  for (const auto lang : {pair.src_lang, pair.tgt_lang}) {
    if (!supports_language(lang)) {
      throw Error(ErrorKind::kCapability, model_id() + " does not support language '" +
                                              std::string(lang) + "'");
    }
  }
}

HiddenStateSequence SurrogateAdapter::extract_states(const PairView& pair, int block) const {
  if (block < 0 || block > num_blocks()) {
    throw Error(ErrorKind::kRange, "block " + std::to_string(block) + " outside [0, " +
                                       std::to_string(num_blocks()) + "]");
  }
  check_languages(pair);
  return do_extract(pair, block);
}

std::vector<double> SurrogateAdapter::target_log_probs(const PairView& pair) const {
  check_languages(pair);
  return do_target_log_probs(pair);
}

int list_blocks(const SurrogateAdapter* adapter) {
  if (adapter == nullptr) throw Error(ErrorKind::kUsage, "surrogate adapter is not loaded");
  return adapter->num_blocks();
}

PerplexityRecord per_word_perplexity(const SurrogateAdapter& adapter, const SentencePair& pair) {
  const auto log_probs = adapter.target_log_probs(pair.view());
  const auto value = perplexity_from_log_probs(log_probs);
  return {pair.key(), value.ppl, log_probs.size(), pair.label, value.zero_probability};
}

// ToySurrogateConfig ---------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw Error(ErrorKind::kConfiguration,
                "bad value '" + std::string(text) + "' for toy key '" + std::string(key) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = text.find(sep);
    out.push_back(text.substr(0, pos));
    if (pos == std::string_view::npos) break;
    text.remove_prefix(pos + 1);
  }
  return out;
}

}  // namespace

std::string ToySurrogateConfig::model_id() const {
  std::vector<std::string> langs = languages;
  std::sort(langs.begin(), langs.end());
  std::string joined;
  for (std::size_t i = 0; i < langs.size(); ++i) joined += (i ? "+" : "") + langs[i];
  std::ostringstream ss;
  ss << "toy:dim=" << hidden_dim << ",layers=" << layers << ",buckets=" << buckets
     << ",seed=" << seed << ",langs=" << joined << ",signal_block=" << signal_block
     << ",signal_scale=" << format_double(signal_scale)
     << ",output_scale=" << format_double(output_scale)
     << ",source_scale=" << format_double(source_scale);
  return ss.str();
}

ToySurrogateConfig ToySurrogateConfig::parse(std::string_view id) {
  constexpr std::string_view kPrefix = "toy:";
  if (id.substr(0, kPrefix.size()) != kPrefix) {
    throw Error(ErrorKind::kCapability, "not a toy surrogate id: " + std::string(id));
  }
  id.remove_prefix(kPrefix.size());
  ToySurrogateConfig c;
  if (id.empty()) return c;
  for (const auto item : split(id, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kConfiguration, "toy key without value: " + std::string(item));
    }
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (key == "dim") c.hidden_dim = parse_number<int>(key, value);
    else if (key == "layers") c.layers = parse_number<int>(key, value);
    else if (key == "buckets") c.buckets = parse_number<int>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "signal_block") c.signal_block = parse_number<int>(key, value);
    else if (key == "signal_scale") c.signal_scale = parse_number<double>(key, value);
    else if (key == "output_scale") c.output_scale = parse_number<double>(key, value);
    else if (key == "source_scale") c.source_scale = parse_number<double>(key, value);
    else if (key == "langs") {
      c.languages.clear();
      for (const auto lang : split(value, '+')) c.languages.emplace_back(lang);
    } else {
      throw Error(ErrorKind::kConfiguration, "unknown toy key '" + std::string(key) + "'");
    }
  }
  return c;
}

// ToySurrogate ---------------------------------------------------------------

ToySurrogate::ToySurrogate(ToySurrogateConfig config) : config_(std::move(config)) {
  std::sort(config_.languages.begin(), config_.languages.end());
  config_.languages.erase(std::unique(config_.languages.begin(), config_.languages.end()),
                          config_.languages.end());
  if (config_.hidden_dim < 1 || config_.layers < 1 || config_.buckets < 1 ||
      config_.languages.empty()) {
    throw Error(ErrorKind::kConfiguration, "invalid toy surrogate config " + config_.model_id());
  }
  if (config_.signal_block > config_.layers) {
    throw Error(ErrorKind::kConfiguration, "signal_block beyond the last layer");
  }
  const int d = config_.hidden_dim;
  const int langs = static_cast<int>(config_.languages.size());
  vocab_size_ = 1 + langs + 2 * config_.buckets;

  auto engine = rng::stream(config_.seed, "toy-surrogate");
  auto uniform = [&](Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(engine);
    return m;
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  target_embedding_ = uniform(vocab_size_, d, 1.0);
  const int base = 1 + langs;
  target_embedding_.middleRows(base + config_.buckets, config_.buckets) =
      target_embedding_.middleRows(base, config_.buckets);
  source_embedding_ = uniform(config_.buckets, d, 1.0);
  positions_ = uniform(kMaxPositions, d, 0.1);
  for (int l = 0; l < config_.layers; ++l) {
    self_.push_back(uniform(d, d, inv_sqrt_d));
    prefix_.push_back(uniform(d, d, inv_sqrt_d));
    cross_.push_back(uniform(d, d, inv_sqrt_d));
  }
  output_ = uniform(vocab_size_, d, config_.output_scale * inv_sqrt_d);
  if (config_.output_scale == 0.0) output_.setZero();
  signal_direction_ = uniform(1, d, 1.0);
  signal_direction_ /= signal_direction_.norm();
}

std::string ToySurrogate::tokenizer_id() const {
  return "toy-hash-" + std::to_string(config_.buckets);
}

bool ToySurrogate::supports_language(std::string_view lang) const {
  return std::binary_search(config_.languages.begin(), config_.languages.end(), lang);
}

std::uint64_t ToySurrogate::parameter_digest() const {
  std::uint64_t h = rng::fnv1a(model_id());
  auto mix = [&](const Eigen::MatrixXd& m) {
    h = rng::fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
  };
  mix(target_embedding_);
  mix(source_embedding_);
  mix(positions_);
  for (int l = 0; l < config_.layers; ++l) {
    mix(self_[l]);
    mix(prefix_[l]);
    mix(cross_[l]);
  }
  mix(output_);
  mix(signal_direction_);
  return h;
}

std::vector<ToySurrogate::Word> ToySurrogate::words(std::string_view text) const {
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      auto word = text.substr(i, j - i);
      bool marked = false;
      if (word.size() > 1 && word.back() == '~') {
        marked = true;
        word.remove_suffix(1);
      }
      const auto bucket = static_cast<int>(rng::fnv1a(word) % static_cast<std::uint64_t>(config_.buckets));
      out.push_back({bucket, marked});
    }
    i = j;
  }
  return out;
}

int ToySurrogate::word_token(const Word& w) const {
  const int base = 1 + static_cast<int>(config_.languages.size());
  return base + w.bucket + (w.marked ? config_.buckets : 0);
}

std::vector<int> ToySurrogate::tokenize_target(std::string_view text,
                                               std::string_view tgt_lang) const {
  const auto it = std::lower_bound(config_.languages.begin(), config_.languages.end(), tgt_lang);
  if (it == config_.languages.end() || *it != tgt_lang) {
    throw Error(ErrorKind::kCapability, "unsupported language '" + std::string(tgt_lang) + "'");
  }
  std::vector<int> ids{1 + static_cast<int>(it - config_.languages.begin())};
  for (const auto& w : words(text)) ids.push_back(word_token(w));
  return ids;
}

Eigen::MatrixXd ToySurrogate::run(const PairView& pair, int upto, std::vector<int>& ids) const {
  ids = tokenize_target(pair.target, pair.tgt_lang);
  if (ids.size() < 2) throw Error(ErrorKind::kInput, "target tokenizes to nothing");
  const auto src_words = words(pair.source);
  if (src_words.empty()) throw Error(ErrorKind::kInput, "source tokenizes to nothing");

  const auto n = static_cast<Eigen::Index>(ids.size());
  const int d = config_.hidden_dim;
  const int base = 1 + static_cast<int>(config_.languages.size());
  const bool marked = std::any_of(ids.begin(), ids.end(),
                                  [&](int id) { return id >= base + config_.buckets; });
  const Eigen::RowVectorXd shift = signal_direction_ * config_.signal_scale;

  Eigen::MatrixXd h(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    h.row(i) = target_embedding_.row(ids[i]) + positions_.row(i % kMaxPositions);
  }
  if (marked && config_.signal_block == 0) h.rowwise() += shift;

  Eigen::RowVectorXd src_mean = Eigen::RowVectorXd::Zero(d);
  for (const auto& w : src_words) src_mean += source_embedding_.row(w.bucket);
  src_mean /= static_cast<double>(src_words.size());

  for (int l = 1; l <= upto; ++l) {
    Eigen::MatrixXd prefix(n, d);
    Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index i = 0; i < n; ++i) {
      running += h.row(i);
      prefix.row(i) = running / static_cast<double>(i + 1);
    }
    const Eigen::MatrixXd mixed =
        (h * self_[l - 1] + prefix * prefix_[l - 1]).array().tanh().matrix();
    const Eigen::RowVectorXd cross = config_.source_scale * (src_mean * cross_[l - 1]);
    h += 0.5 * mixed;
    h.rowwise() += cross;
    if (marked && config_.signal_block == l) h.rowwise() += shift;
  }
  return h;
}

HiddenStateSequence ToySurrogate::do_extract(const PairView& pair, int block) const {
  HiddenStateSequence seq;
  seq.states = run(pair, block, seq.token_ids);
  seq.block = block;
  seq.pair_id = std::string(pair.id);
  return seq;
}

std::vector<double> ToySurrogate::do_target_log_probs(const PairView& pair) const {
  std::vector<int> ids;
  const Eigen::MatrixXd h = run(pair, config_.layers, ids);
  const Eigen::MatrixXd logits = h * output_.transpose();
  std::vector<double> out;
  out.reserve(ids.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double max = logits.row(i).maxCoeff();
    const double lse = max + std::log((logits.row(i).array() - max).exp().sum());
    const int next = static_cast<std::size_t>(i + 1) < ids.size() ? ids[i + 1] : 0;
    out.push_back(logits(i, next) - lse);
  }
  return out;
}

std::unique_ptr<SurrogateAdapter> load_surrogate(std::string_view model_id) {
  if (model_id.substr(0, 4) == "toy:") {
    return std::make_unique<ToySurrogate>(ToySurrogateConfig::parse(model_id));
  }
  throw Error(ErrorKind::kCapability,
              "no surrogate backend for '" + std::string(model_id) + "' in this build");
}

// ExtractionCache ------------------------------------------------------------

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string encode_name(std::string_view id) {
  std::string out;
  for (const char ch : id) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      out.push_back(ch);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02X", c);
      out += buf;
    }
  }
  if (out.size() > 180) out = out.substr(0, 160) + "~" + hex64(rng::fnv1a(id));
  return out;
}

}  // namespace

ExtractionCache::ExtractionCache(std::filesystem::path root) : root_(std::move(root)) {}

ExtractionCache ExtractionCache::from_environment(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv(kEnvVar); env != nullptr && *env != '\0') {
    return ExtractionCache(env);
  }
  return ExtractionCache(fallback);
}

std::filesystem::path ExtractionCache::record_path(std::string_view pair_id,
                                                   std::string_view model_id, int block) const {
  return root_ / hex64(rng::fnv1a(model_id)) / ("block" + std::to_string(block)) /
         (encode_name(pair_id) + ".smtd");
}

bool ExtractionCache::contains(std::string_view pair_id, std::string_view model_id,
                               int block) const {
  return std::filesystem::exists(record_path(pair_id, model_id, block));
}

void ExtractionCache::store(const HiddenStateSequence& seq, std::string_view model_id) const {
  nlohmann::ordered_json header;
  header["pair_id"] = seq.pair_id;
  header["model_id"] = std::string(model_id);
  header["block"] = seq.block;
  header["n"] = seq.states.rows();
  header["d_s"] = seq.states.cols();
  header["token_ids"] = seq.token_ids;
  const io::NamedTensor tensor{"states", seq.states};
  io::write_container(record_path(seq.pair_id, model_id, seq.block), header.dump(),
                      std::span(&tensor, 1), io::DType::kFloat32);
}

HiddenStateSequence ExtractionCache::load(std::string_view pair_id, std::string_view model_id,
                                          int block) const {
  const auto path = record_path(pair_id, model_id, block);
  const auto container = io::read_container(path);
  const auto header = nlohmann::json::parse(container.header_json);
  if (header.at("pair_id") != pair_id || header.at("model_id") != model_id ||
      header.at("block") != block) {
    throw Error(ErrorKind::kIo, path.string() + " holds a different cache key");
  }
  const auto* tensor = container.find("states");
  if (tensor == nullptr) throw Error(ErrorKind::kIo, path.string() + " has no states tensor");
  HiddenStateSequence seq;
  seq.states = tensor->value;
  seq.block = block;
  seq.pair_id = std::string(pair_id);
  seq.token_ids = header.value("token_ids", std::vector<int>{});
  return seq;
}

}  // namespace smatd
