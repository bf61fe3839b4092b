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
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "smatd/corpus.hpp"

namespace smatd {

/// Decoder states of one block for every teacher-forced decoder position.
/// Row i belongs to token_ids[i]; there are no padding rows.
struct HiddenStateSequence {
  Eigen::MatrixXd states;
  int block = 0;
  std::vector<int> token_ids;
  std::string pair_id;

  Eigen::Index length() const { return states.rows(); }
};

struct PerplexityRecord {
  std::string pair_id;
  double ppl = 1.0;
  std::size_t n_tokens = 0;
  Label label = Label::kHT;
  /// Set when one scored token had probability 0; ppl is then +inf.
  bool zero_probability = false;
};

struct PerplexityValue {
  double ppl = 1.0;
  bool zero_probability = false;
};

/// exp(-mean(log p)) over natural-log token probabilities.
PerplexityValue perplexity_from_log_probs(std::span<const double> log_probs);

/// Frozen encoder-decoder MT model used only as a feature extractor.
///
/// Block 0 is the decoder embedding output, block i the output of decoder
/// layer i, so valid blocks are 0..num_blocks(). The public entry points
/// validate arguments and delegate to the protected hooks.
class SurrogateAdapter {
 public:
  virtual ~SurrogateAdapter() = default;

  virtual std::string model_id() const = 0;
  virtual int hidden_dim() const = 0;
  virtual int num_blocks() const = 0;
  virtual std::string tokenizer_id() const = 0;
  virtual bool supports_language(std::string_view lang) const = 0;
  virtual std::uint64_t parameter_digest() const = 0;

  HiddenStateSequence extract_states(const PairView& pair, int block) const;
  /// Natural-log probabilities of the scored target tokens (target words and
  /// end-of-sequence; the leading language tag is never scored).
  std::vector<double> target_log_probs(const PairView& pair) const;

 protected:
  virtual HiddenStateSequence do_extract(const PairView& pair, int block) const = 0;
  virtual std::vector<double> do_target_log_probs(const PairView& pair) const = 0;

 private:
  void check_languages(const PairView& pair) const;
};

struct ToySurrogateConfig {
  int hidden_dim = 16;
  int layers = 2;
  int buckets = 256;
  std::uint64_t seed = 7;
  std::vector<std::string> languages{"de", "en", "es", "fi", "ru"};
  /// Block whose output receives the marker shift (-1 disables it).
  int signal_block = -1;
  double signal_scale = 0.0;
  double output_scale = 1.0;
  double source_scale = 0.5;

  /// Canonical "toy:key=value,..." identifier; parse() inverts it.
  std::string model_id() const;
  static ToySurrogateConfig parse(std::string_view model_id);
};

/// Deterministic seq2seq stand-in shaped like the real adapter.
///
/// Words are hashed into `buckets` ids. A word ending in '~' is a *marked*
/// twin of the unmarked word: it has its own token id (and output logit) but
/// shares its embedding row, so blocks below `signal_block` cannot tell a
/// marked sentence from its unmarked twin. At `signal_block`, every position
/// of a target containing a marked word is shifted by signal_scale * u for a
/// fixed unit vector u; the shift then propagates through later layers.
///
/// Decoder input is [tag(tgt_lang), w_1, ..., w_k]. Layer l computes
///   h_l = h_{l-1} + 0.5 tanh(h_{l-1} W_l + prefix_mean(h_{l-1}) U_l)
///         + source_scale * mean(source embeddings) M_l
/// so block 0 never sees the source.
class ToySurrogate final : public SurrogateAdapter {
 public:
  explicit ToySurrogate(ToySurrogateConfig config);

  std::string model_id() const override { return config_.model_id(); }
  int hidden_dim() const override { return config_.hidden_dim; }
  int num_blocks() const override { return config_.layers; }
  std::string tokenizer_id() const override;
  bool supports_language(std::string_view lang) const override;
  std::uint64_t parameter_digest() const override;

  const ToySurrogateConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }
  const Eigen::RowVectorXd& signal_direction() const { return signal_direction_; }

  /// Decoder input ids for a target in language `tgt_lang`.
  std::vector<int> tokenize_target(std::string_view text, std::string_view tgt_lang) const;

 protected:
  HiddenStateSequence do_extract(const PairView& pair, int block) const override;
  std::vector<double> do_target_log_probs(const PairView& pair) const override;

 private:
  struct Word {
    int bucket;
    bool marked;
  };
  std::vector<Word> words(std::string_view text) const;
  int word_token(const Word& w) const;
  /// Runs the decoder up to `upto` and returns that block's states.
  Eigen::MatrixXd run(const PairView& pair, int upto, std::vector<int>& ids) const;

  ToySurrogateConfig config_;
  int vocab_size_ = 0;
  static constexpr int kMaxPositions = 256;
  Eigen::MatrixXd target_embedding_;  // vocab x d (marked rows copy unmarked)
  Eigen::MatrixXd source_embedding_;  // buckets x d
  Eigen::MatrixXd positions_;         // kMaxPositions x d
  std::vector<Eigen::MatrixXd> self_, prefix_, cross_;
  Eigen::MatrixXd output_;            // vocab x d
  Eigen::RowVectorXd signal_direction_;
};

/// Resolves a model id to an adapter. Only "toy:..." ids have a backend in
/// this build; anything else is a capability error.
std::unique_ptr<SurrogateAdapter> load_surrogate(std::string_view model_id);

/// Throws kUsage when `adapter` is null.
int list_blocks(const SurrogateAdapter* adapter);

PerplexityRecord per_word_perplexity(const SurrogateAdapter& adapter, const SentencePair& pair);

/// On-disk store of extracted states, one float32 container per
/// (pair_id, model_id, block). Writes overwrite.
class ExtractionCache {
 public:
  static constexpr const char* kEnvVar = "SMATD_CACHE_DIR";

  explicit ExtractionCache(std::filesystem::path root);
  /// Root from $SMATD_CACHE_DIR, else `fallback`.
  static ExtractionCache from_environment(const std::filesystem::path& fallback);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path record_path(std::string_view pair_id, std::string_view model_id,
                                    int block) const;
  bool contains(std::string_view pair_id, std::string_view model_id, int block) const;
  void store(const HiddenStateSequence& seq, std::string_view model_id) const;
  HiddenStateSequence load(std::string_view pair_id, std::string_view model_id, int block) const;

 private:
  std::filesystem::path root_;
};

}  // namespace smatd
