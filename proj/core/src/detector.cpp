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
#include "smatd/detector.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>
#include "smatd/error.hpp"
#include "smatd/tensor_io.hpp"

namespace smatd {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Label classify(double p, double threshold) { return p > threshold ? Label::kHT : Label::kMT; }

void DetectorConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfiguration, what); };
  if (d_model < 1 || layers < 1 || heads < 1 || ffn_dim < 1) fail("detector sizes must be positive");
  if (d_model % heads != 0) fail("d_model must be divisible by heads");
  if (surrogate_dim < 1) fail("surrogate_dim must be positive");
  if (lm_dim && *lm_dim < 1) fail("lm_dim must be positive");
  if (max_positions < (lm_dim ? 2 : 1)) fail("max_positions too small");
  if (!(dropout >= 0 && dropout < 1) || !(pos_dropout >= 0 && pos_dropout < 1)) {
    fail("dropout must lie in [0, 1)");
  }
  if (!(stochastic_depth_p >= 0 && stochastic_depth_p <= 1)) {
    fail("stochastic_depth_p must lie in [0, 1]");
  }
  if (!(threshold >= 0 && threshold <= 1)) fail("threshold must lie in [0, 1]");
  if (block < 0) fail("block must be non-negative");
}

DetectorModel::DetectorModel(DetectorConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  auto engine = rng::stream(seed, "detector-init");
  surrogate_projection_ = nn::Linear("surrogate_projection", config_.surrogate_dim,
                                     config_.d_model, engine);
  if (config_.lm_dim) {
    lm_projection_.emplace("lm_projection", *config_.lm_dim, config_.d_model, engine);
  }
  positions_ = nn::Parameter("positions", nn::Matrix(config_.max_positions, config_.d_model));
  nn::init_uniform(positions_.value, 0.05, engine);
  nn::EncoderConfig enc{config_.d_model, config_.layers, config_.heads, config_.ffn_dim,
                        config_.dropout};
  encoder_ = nn::TransformerEncoder("encoder", enc, engine);
  head_ = nn::Linear("head", config_.d_model, 1, engine);
}

Eigen::MatrixXd DetectorModel::project_surrogate(const Eigen::MatrixXd& states) const {
  if (states.cols() != config_.surrogate_dim) {
    throw Error(ErrorKind::kDimension, "surrogate states have width " +
                                           std::to_string(states.cols()) + ", detector expects " +
                                           std::to_string(config_.surrogate_dim));
  }
  return surrogate_projection_.forward(states);
}

AssembledInput DetectorModel::assemble_input(const Eigen::MatrixXd& projected,
                                             const Eigen::RowVectorXd* lm_vec, bool training,
                                             rng::Engine& engine) const {
  if (projected.rows() < 1) throw Error(ErrorKind::kInput, "empty surrogate sequence");
  AssembledInput out;
  bool include_lm = false;
  if (lm_vec != nullptr) {
    if (!lm_projection_) {
      throw Error(ErrorKind::kConfiguration, "LM vector given to a detector without lm_projection");
    }
    include_lm = true;
    if (training) {
      std::bernoulli_distribution omit(config_.stochastic_depth_p);
      include_lm = !omit(engine);
    }
  }
  const Eigen::Index budget = config_.max_positions - (include_lm ? 1 : 0);
  const Eigen::Index kept = std::min<Eigen::Index>(projected.rows(), budget);
  out.truncated = kept < projected.rows();
  out.rows.resize(kept + (include_lm ? 1 : 0), config_.d_model);
  if (include_lm) {
    out.rows.row(0) = lm_projection_->forward(*lm_vec).row(0);
    out.rows.bottomRows(kept) = projected.topRows(kept);
    out.role = FirstTokenRole::kCls;
  } else {
    out.rows = projected.topRows(kept);
  }
  out.lm_row_included = include_lm;
  return out;
}

DetectorModel::Forward DetectorModel::forward(const AssembledInput& input, const nn::Mode& mode,
                                              bool keep_cache) const {
  if (input.rows.rows() < 1) throw Error(ErrorKind::kInput, "empty assembled input");
  const Eigen::Index n = input.rows.rows();
  Forward f;
  nn::Matrix x = input.rows + positions_.value.topRows(n);
  f.pos_mask = nn::dropout_mask(n, x.cols(), config_.pos_dropout, mode);
  nn::apply_mask(x, f.pos_mask);
  if (!x.allFinite()) throw Error(ErrorKind::kNumeric, "non-finite projected input");
  const nn::Matrix h = encoder_.forward(x, mode, keep_cache ? &f.cache : nullptr);
  f.first_row = h.topRows(1);
  f.head_mask = nn::dropout_mask(1, h.cols(), config_.dropout, mode);
  nn::apply_mask(f.first_row, f.head_mask);
  f.logit = head_.forward(f.first_row)(0, 0);
  if (!std::isfinite(f.logit)) throw Error(ErrorKind::kNumeric, "non-finite classifier head output");
  return f;
}

DetectionScore DetectorModel::score(const AssembledInput& assembled,
                                    std::string_view pair_id) const {
  const auto f = forward(assembled, {}, false);
  DetectionScore s;
  s.pair_id = std::string(pair_id);
  s.p_ht = sigmoid(f.logit);
  s.threshold_used = config_.threshold;
  s.predicted = classify(s.p_ht, config_.threshold);
  return s;
}

DetectionScore DetectorModel::score(const DetectorExample& example) const {
  rng::Engine unused;
  const auto projected = project_surrogate(example.states);
  const auto assembled = assemble_input(
      projected, example.cls ? &*example.cls : static_cast<const Eigen::RowVectorXd*>(nullptr),
      false, unused);
  return score(assembled, example.pair_id);
}

double DetectorModel::loss_and_gradients(const DetectorExample& example, const nn::Mode& mode) {
  const double y = example.label == Label::kHT ? 1.0 : 0.0;
  rng::Engine fallback;
  rng::Engine& engine = mode.engine ? *mode.engine : fallback;
  const nn::Matrix projected = project_surrogate(example.states);
  const Eigen::RowVectorXd* lm = example.cls ? &*example.cls : nullptr;
  const auto assembled = assemble_input(projected, lm, mode.training, engine);
  const auto f = forward(assembled, mode, true);
  const double loss = softplus(f.logit) - y * f.logit;

  nn::Matrix dz(1, 1);
  dz(0, 0) = sigmoid(f.logit) - y;
  nn::Matrix dfirst = head_.backward(f.first_row, dz);
  nn::apply_mask(dfirst, f.head_mask);
  const Eigen::Index n = assembled.rows.rows();
  nn::Matrix dh = nn::Matrix::Zero(n, config_.d_model);
  dh.row(0) = dfirst.row(0);
  nn::Matrix dx = encoder_.backward(f.cache, dh);
  nn::apply_mask(dx, f.pos_mask);
  positions_.grad.topRows(n) += dx;

  Eigen::Index offset = 0;
  if (assembled.lm_row_included) {
    lm_projection_->accumulate(*lm, dx.topRows(1));
    offset = 1;
  }
  const Eigen::Index kept = n - offset;
  surrogate_projection_.accumulate(example.states.topRows(kept), dx.bottomRows(kept));
  return loss;
}

double DetectorModel::accumulate_gradients(const DetectorExample& example, rng::Engine& engine) {
  return loss_and_gradients(example, {true, &engine});
}

nn::ParameterList DetectorModel::parameters() {
  nn::ParameterList out;
  surrogate_projection_.collect(out);
  if (lm_projection_) lm_projection_->collect(out);
  out.push_back(&positions_);
  encoder_.collect(out);
  head_.collect(out);
  return out;
}

std::uint64_t DetectorModel::parameter_digest() const {
  return nn::digest(const_cast<DetectorModel*>(this)->parameters());
}

std::string to_json(const DetectorConfig& c) {
  nlohmann::ordered_json j;
  j["d_model"] = c.d_model;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["ffn_dim"] = c.ffn_dim;
  j["dropout"] = c.dropout;
  j["pos_dropout"] = c.pos_dropout;
  j["max_positions"] = c.max_positions;
  j["block"] = c.block;
  j["surrogate_dim"] = c.surrogate_dim;
  j["lm_dim"] = c.lm_dim ? nlohmann::ordered_json(*c.lm_dim) : nlohmann::ordered_json(nullptr);
  j["stochastic_depth_p"] = c.stochastic_depth_p;
  j["threshold"] = c.threshold;
  return j.dump();
}

DetectorConfig detector_config_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  DetectorConfig c;
  c.d_model = j.at("d_model");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn_dim = j.at("ffn_dim");
  c.dropout = j.at("dropout");
  c.pos_dropout = j.at("pos_dropout");
  c.max_positions = j.at("max_positions");
  c.block = j.at("block");
  c.surrogate_dim = j.at("surrogate_dim");
  if (!j.at("lm_dim").is_null()) c.lm_dim = j.at("lm_dim").get<int>();
  c.stochastic_depth_p = j.at("stochastic_depth_p");
  c.threshold = j.at("threshold");
  return c;
}

void DetectorModel::save(const std::filesystem::path& dir, const ArtifactInfo& info) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["config"] = nlohmann::ordered_json::parse(to_json(config_));
  meta["surrogate_model_id"] = info.surrogate_model_id;
  meta["lm_model_id"] = info.lm_model_id ? nlohmann::ordered_json(*info.lm_model_id)
                                         : nlohmann::ordered_json(nullptr);
  meta["lm_checkpoint"] = info.lm_checkpoint ? nlohmann::ordered_json(*info.lm_checkpoint)
                                             : nlohmann::ordered_json(nullptr);
  meta["block"] = config_.block;
  meta["training_seed"] = info.training_seed;
  meta["dev_accuracy"] = info.dev_accuracy;
  meta["best_epoch"] = info.best_epoch;
  meta["config_digest"] = info.config_digest;
  meta["train_langs"] = std::vector<std::string>(info.train_langs.begin(), info.train_langs.end());
  meta["train_systems"] =
      std::vector<std::string>(info.train_systems.begin(), info.train_systems.end());
  meta["stochastic_depth"] = "omit LM row per example; no inference-time rescaling";
  const auto tensors = nn::export_parameters(const_cast<DetectorModel*>(this)->parameters());
  io::write_container(dir / "weights.smtd", R"({"kind":"detector-weights"})", tensors,
                      io::DType::kFloat64);
  io::write_text_atomic(dir / "metadata.json", meta.dump(2) + "\n");
}

DetectorModel DetectorModel::load(const std::filesystem::path& dir, ArtifactInfo* info) {
  const auto meta = nlohmann::json::parse(io::read_text(dir / "metadata.json"));
  DetectorModel model(detector_config_from_json(meta.at("config").dump()), 0);
  nn::import_parameters(model.parameters(), io::read_container(dir / "weights.smtd"));
  if (info) {
    info->surrogate_model_id = meta.at("surrogate_model_id").get<std::string>();
    if (!meta.at("lm_model_id").is_null()) info->lm_model_id = meta.at("lm_model_id").get<std::string>();
    if (meta.contains("lm_checkpoint") && !meta.at("lm_checkpoint").is_null()) {
      info->lm_checkpoint = meta.at("lm_checkpoint").get<std::string>();
    }
    info->training_seed = meta.value("training_seed", std::uint64_t{0});
    info->dev_accuracy = meta.value("dev_accuracy", 0.0);
    info->best_epoch = meta.value("best_epoch", 0);
    info->config_digest = meta.value("config_digest", std::string());
    for (const auto& l : meta.value("train_langs", std::vector<std::string>{})) info->train_langs.insert(l);
    for (const auto& s : meta.value("train_systems", std::vector<std::string>{})) {
      info->train_systems.insert(s);
    }
  }
  return model;
}

}  // namespace smatd
