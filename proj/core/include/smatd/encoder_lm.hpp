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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "smatd/corpus.hpp"
#include "smatd/nn.hpp"
#include "smatd/trainer.hpp"

namespace smatd {

enum class LmMode { kMonolingual, kBilingual };
std::string_view to_string(LmMode mode);
LmMode parse_lm_mode(std::string_view text);

/// Final-block state of the first ([CLS]) position.
struct ClsVector {
  Eigen::RowVectorXd vector;
  std::string pair_id;
  /// The assembled input exceeded the maximum length and was cut.
  bool truncated = false;
};

/// Encoder language model used both as a stand-alone HT/MT baseline and, once
/// frozen, as the source of the fused CLS representation.
class LmAdapter {
 public:
  virtual ~LmAdapter() = default;

  virtual std::string model_id() const = 0;
  virtual int hidden_dim() const = 0;
  virtual LmMode mode() const = 0;
  virtual bool frozen() const = 0;
  virtual std::uint64_t parameter_digest() const = 0;
  /// Sentence-pair assembly convention, recorded in checkpoint metadata.
  virtual std::string separator_convention() const = 0;
  virtual ClsVector encode_pair(const PairView& pair) const = 0;
};

struct ToyLmConfig {
  int hidden_dim = 16;
  int layers = 1;
  int heads = 2;
  int ffn_dim = 32;
  int buckets = 512;
  int max_length = 128;
  std::uint64_t seed = 11;
  LmMode mode = LmMode::kBilingual;
  double dropout = 0.1;

  std::string model_id() const;
  static ToyLmConfig parse(std::string_view model_id);
};

/// Small BERT-style encoder: hashed word embeddings, learned absolute
/// positions, a post-norm transformer encoder and a sigmoid head on [CLS].
///
/// Bilingual input is "[CLS] source [SEP] target [SEP]", monolingual input
/// "[CLS] target [SEP]". Over-long inputs lose tokens from the tail of the
/// longer segment first.
class ToyEncoderLm final : public LmAdapter {
 public:
  using Example = SentencePair;

  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kFirstWord = 3;

  explicit ToyEncoderLm(ToyLmConfig config);

  std::string model_id() const override { return config_.model_id(); }
  int hidden_dim() const override { return config_.hidden_dim; }
  LmMode mode() const override { return config_.mode; }
  bool frozen() const override { return frozen_; }
  std::uint64_t parameter_digest() const override;
  std::string separator_convention() const override;
  ClsVector encode_pair(const PairView& pair) const override;

  const ToyLmConfig& config() const { return config_; }
  void freeze() { frozen_ = true; }

  struct Tokens {
    std::vector<int> ids;
    bool truncated = false;
  };
  Tokens assemble(const PairView& pair) const;

  /// Sigmoid head output, strictly inside (0, 1) for finite logits.
  double probability_ht(const PairView& pair) const;
  Label predict_label(const SentencePair& pair) const;

  /// Training-mode loss; adds its gradient to parameters(). kPrecondition
  /// when frozen.
  double accumulate_gradients(const SentencePair& pair, rng::Engine& engine);
  /// Binary cross-entropy and its gradient under an explicit mode.
  double loss_and_gradients(const SentencePair& pair, const nn::Mode& mode);

  nn::ParameterList parameters();

  struct CheckpointInfo {
    double dev_accuracy = 0.0;
    int epoch = 0;
    std::uint64_t seed = 0;
    std::string config_digest;
  };
  void save(const std::filesystem::path& dir, const CheckpointInfo& info) const;
  static ToyEncoderLm load(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

 private:
  struct Forward {
    Tokens tokens;
    nn::Matrix hidden;
    nn::TransformerEncoder::Cache cache;
    nn::Matrix cls_mask;
    double logit = 0.0;
  };
  Forward forward(const PairView& pair, const nn::Mode& mode, bool keep_cache) const;
  std::vector<int> word_ids(std::string_view text) const;

  ToyLmConfig config_;
  bool frozen_ = false;
  nn::Parameter token_embedding_;
  nn::Parameter positions_;
  nn::TransformerEncoder encoder_;
  nn::Linear head_;
};

struct LmFinetuneResult {
  ToyEncoderLm model;
  TrainingHistory history;
};

/// Fine-tunes a copy of `base` for HT-vs-MT classification and returns the
/// best-dev checkpoint (still unfrozen) with its per-epoch history.
LmFinetuneResult finetune_lm(const ToyEncoderLm& base, const CorpusSplit& train,
                             const CorpusSplit& dev, const TrainConfig& config,
                             std::uint64_t seed);

}  // namespace smatd
