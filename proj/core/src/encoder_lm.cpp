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
#include "smatd/encoder_lm.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>
#include "smatd/error.hpp"
#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"

namespace smatd {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string_view to_string(LmMode mode) {
  return mode == LmMode::kBilingual ? "bilingual" : "monolingual";
}

LmMode parse_lm_mode(std::string_view text) {
  if (text == "bilingual") return LmMode::kBilingual;
  if (text == "monolingual") return LmMode::kMonolingual;
  throw Error(ErrorKind::kConfiguration, "unknown LM mode '" + std::string(text) + "'");
}

std::string ToyLmConfig::model_id() const {
  std::ostringstream ss;
  ss << "toy-lm:dim=" << hidden_dim << ",layers=" << layers << ",heads=" << heads
     << ",ffn=" << ffn_dim << ",buckets=" << buckets << ",max_length=" << max_length
     << ",seed=" << seed << ",mode=" << to_string(mode) << ",dropout=" << format_double(dropout);
  return ss.str();
}

ToyLmConfig ToyLmConfig::parse(std::string_view id) {
  constexpr std::string_view kPrefix = "toy-lm:";
  if (id.substr(0, kPrefix.size()) != kPrefix) {
    throw Error(ErrorKind::kCapability, "no LM backend for '" + std::string(id) + "' in this build");
  }
  id.remove_prefix(kPrefix.size());
  ToyLmConfig c;
  auto number = [](std::string_view key, std::string_view text, auto& out) {
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end) {
      throw Error(ErrorKind::kConfiguration,
                  "bad value '" + std::string(text) + "' for LM key '" + std::string(key) + "'");
    }
  };
  while (!id.empty()) {
    const auto comma = id.find(',');
    const auto item = id.substr(0, comma);
    id = comma == std::string_view::npos ? std::string_view{} : id.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kConfiguration, "LM key without value: " + std::string(item));
    }
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (key == "dim") number(key, value, c.hidden_dim);
    else if (key == "layers") number(key, value, c.layers);
    else if (key == "heads") number(key, value, c.heads);
    else if (key == "ffn") number(key, value, c.ffn_dim);
    else if (key == "buckets") number(key, value, c.buckets);
    else if (key == "max_length") number(key, value, c.max_length);
    else if (key == "seed") number(key, value, c.seed);
    else if (key == "dropout") number(key, value, c.dropout);
    else if (key == "mode") c.mode = parse_lm_mode(value);
    else throw Error(ErrorKind::kConfiguration, "unknown LM key '" + std::string(key) + "'");
  }
  return c;
}

ToyEncoderLm::ToyEncoderLm(ToyLmConfig config) : config_(config) {
  if (config_.max_length < 4 || config_.buckets < 1) {
    throw Error(ErrorKind::kConfiguration, "invalid LM config " + config_.model_id());
  }
  auto engine = rng::stream(config_.seed, "toy-lm");
  const Eigen::Index d = config_.hidden_dim;
  token_embedding_ = nn::Parameter("lm.token_embedding", nn::Matrix(kFirstWord + config_.buckets, d));
  nn::init_uniform(token_embedding_.value, 0.5, engine);
  positions_ = nn::Parameter("lm.positions", nn::Matrix(config_.max_length, d));
  nn::init_uniform(positions_.value, 0.05, engine);
  nn::EncoderConfig enc{d, config_.layers, config_.heads, config_.ffn_dim, config_.dropout};
  encoder_ = nn::TransformerEncoder("lm.encoder", enc, engine);
  head_ = nn::Linear("lm.head", d, 1, engine);
  nn::init_uniform(head_.weight.value, 0.02, engine);
}

std::uint64_t ToyEncoderLm::parameter_digest() const {
  return nn::digest(const_cast<ToyEncoderLm*>(this)->parameters());
}

std::string ToyEncoderLm::separator_convention() const {
  return config_.mode == LmMode::kBilingual ? "[CLS] source [SEP] target [SEP]"
                                            : "[CLS] target [SEP]";
}

nn::ParameterList ToyEncoderLm::parameters() {
  nn::ParameterList out{&token_embedding_, &positions_};
  encoder_.collect(out);
  head_.collect(out);
  return out;
}

std::vector<int> ToyEncoderLm::word_ids(std::string_view text) const {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      const auto h = rng::fnv1a(text.substr(i, j - i));
      out.push_back(kFirstWord + static_cast<int>(h % static_cast<std::uint64_t>(config_.buckets)));
    }
    i = j;
  }
  return out;
}

ToyEncoderLm::Tokens ToyEncoderLm::assemble(const PairView& pair) const {
  Tokens t;
  std::vector<int> tgt = word_ids(pair.target);
  if (config_.mode == LmMode::kMonolingual) {
    const std::size_t budget = static_cast<std::size_t>(config_.max_length) - 2;
    if (tgt.size() > budget) {
      tgt.resize(budget);
      t.truncated = true;
    }
    t.ids.push_back(kCls);
    t.ids.insert(t.ids.end(), tgt.begin(), tgt.end());
    t.ids.push_back(kSep);
    return t;
  }
  std::vector<int> src = word_ids(pair.source);
  if (src.empty() || tgt.empty()) {
    throw Error(ErrorKind::kInput, "bilingual LM input needs non-empty source and target");
  }
  const std::size_t budget = static_cast<std::size_t>(config_.max_length) - 3;
  while (src.size() + tgt.size() > budget) {
    auto& longer = src.size() > tgt.size() ? src : tgt;
    longer.pop_back();
    t.truncated = true;
  }
  t.ids.push_back(kCls);
  t.ids.insert(t.ids.end(), src.begin(), src.end());
  t.ids.push_back(kSep);
  t.ids.insert(t.ids.end(), tgt.begin(), tgt.end());
  t.ids.push_back(kSep);
  return t;
}

ToyEncoderLm::Forward ToyEncoderLm::forward(const PairView& pair, const nn::Mode& mode,
                                            bool keep_cache) const {
  Forward f;
  f.tokens = assemble(pair);
  const auto n = static_cast<Eigen::Index>(f.tokens.ids.size());
  nn::Matrix x(n, config_.hidden_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = token_embedding_.value.row(f.tokens.ids[i]) + positions_.value.row(i);
  }
  f.hidden = encoder_.forward(x, mode, keep_cache ? &f.cache : nullptr);
  nn::Matrix cls = f.hidden.topRows(1);
  f.cls_mask = nn::dropout_mask(1, cls.cols(), config_.dropout, mode);
  nn::apply_mask(cls, f.cls_mask);
  f.logit = head_.forward(cls)(0, 0);
  return f;
}

ClsVector ToyEncoderLm::encode_pair(const PairView& pair) const {
  const auto f = forward(pair, {}, false);
  return {f.hidden.row(0), std::string(pair.id), f.tokens.truncated};
}

double ToyEncoderLm::probability_ht(const PairView& pair) const {
  return sigmoid(forward(pair, {}, false).logit);
}

Label ToyEncoderLm::predict_label(const SentencePair& pair) const {
  return probability_ht(pair.view()) > 0.5 ? Label::kHT : Label::kMT;
}

double ToyEncoderLm::loss_and_gradients(const SentencePair& pair, const nn::Mode& mode) {
  const double y = pair.label == Label::kHT ? 1.0 : 0.0;
  const auto f = forward(pair.view(), mode, true);
  const double loss = softplus(f.logit) - y * f.logit;
  nn::Matrix cls = f.hidden.topRows(1);
  nn::apply_mask(cls, f.cls_mask);
  nn::Matrix dz(1, 1);
  dz(0, 0) = sigmoid(f.logit) - y;
  nn::Matrix dcls = head_.backward(cls, dz);
  nn::apply_mask(dcls, f.cls_mask);
  nn::Matrix dh = nn::Matrix::Zero(f.hidden.rows(), f.hidden.cols());
  dh.row(0) = dcls.row(0);
  const nn::Matrix dx = encoder_.backward(f.cache, dh);
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    token_embedding_.grad.row(f.tokens.ids[i]) += dx.row(i);
    positions_.grad.row(i) += dx.row(i);
  }
  return loss;
}

double ToyEncoderLm::accumulate_gradients(const SentencePair& pair, rng::Engine& engine) {
  if (frozen_) throw Error(ErrorKind::kPrecondition, "cannot train a frozen LM");
  return loss_and_gradients(pair, {true, &engine});
}

void ToyEncoderLm::save(const std::filesystem::path& dir, const CheckpointInfo& info) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["model_id"] = model_id();
  meta["mode"] = std::string(to_string(config_.mode));
  meta["separator"] = separator_convention();
  meta["dev_accuracy"] = info.dev_accuracy;
  meta["epoch"] = info.epoch;
  meta["seed"] = info.seed;
  meta["config_digest"] = info.config_digest;
  meta["frozen"] = frozen_;
  const auto tensors = nn::export_parameters(const_cast<ToyEncoderLm*>(this)->parameters());
  io::write_container(dir / "weights.smtd", R"({"kind":"lm-weights"})", tensors,
                      io::DType::kFloat64);
  io::write_text_atomic(dir / "metadata.json", meta.dump(2) + "\n");
}

ToyEncoderLm ToyEncoderLm::load(const std::filesystem::path& dir, CheckpointInfo* info) {
  const auto meta = nlohmann::json::parse(io::read_text(dir / "metadata.json"));
  ToyEncoderLm lm(ToyLmConfig::parse(meta.at("model_id").get<std::string>()));
  nn::import_parameters(lm.parameters(), io::read_container(dir / "weights.smtd"));
  lm.frozen_ = meta.value("frozen", false);
  if (info) {
    info->dev_accuracy = meta.value("dev_accuracy", 0.0);
    info->epoch = meta.value("epoch", 0);
    info->seed = meta.value("seed", std::uint64_t{0});
    info->config_digest = meta.value("config_digest", std::string());
  }
  return lm;
}

LmFinetuneResult finetune_lm(const ToyEncoderLm& base, const CorpusSplit& train,
                             const CorpusSplit& dev, const TrainConfig& config,
                             std::uint64_t seed) {
  if (base.frozen()) throw Error(ErrorKind::kPrecondition, "LM adapter is frozen");
  if (train.pairs.empty() || !is_class_balanced(train.pairs)) {
    throw Error(ErrorKind::kPrecondition, "LM training split is not class-balanced");
  }
  auto result = fit<ToyEncoderLm>(base, std::span<const SentencePair>(train.pairs),
                                  std::span<const SentencePair>(dev.pairs), config, seed);
  return {std::move(result.model), std::move(result.history)};
}

}  // namespace smatd
