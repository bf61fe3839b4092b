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
#include <set>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "smatd/corpus.hpp"
#include "smatd/encoder_lm.hpp"
#include "smatd/nn.hpp"
#include "smatd/rng.hpp"
#include "smatd/surrogate.hpp"

namespace smatd {

struct DetectorConfig {
  int d_model = 512;
  int layers = 3;
  int heads = 4;
  int ffn_dim = 2048;
  double dropout = 0.10;
  double pos_dropout = 0.10;
  int max_positions = 512;
  int block = 0;
  int surrogate_dim = 0;
  std::optional<int> lm_dim;
  /// Probability of omitting the LM row for a training example.
  double stochastic_depth_p = 0.7;
  double threshold = 0.5;

  /// Throws kConfiguration on a violated invariant.
  void validate() const;
};

enum class FirstTokenRole { kFirstDecoderPosition, kCls };

struct AssembledInput {
  Eigen::MatrixXd rows;  // projected rows, LM row first when present
  FirstTokenRole role = FirstTokenRole::kFirstDecoderPosition;
  bool lm_row_included = false;
  bool truncated = false;
};

struct DetectionScore {
  std::string pair_id;
  double p_ht = 0.5;
  Label predicted = Label::kMT;
  double threshold_used = 0.5;
};

/// HT iff p > threshold; a tie is MT.
Label classify(double p, double threshold);

/// Precomputed classifier input for one pair.
struct DetectorExample {
  std::string pair_id;
  Label label = Label::kHT;
  Eigen::MatrixXd states;                 // n x surrogate_dim
  std::optional<Eigen::RowVectorXd> cls;  // lm_dim, fused models only
};

/// Surrogate-state classifier: affine projection to d_model, optional
/// projected LM [CLS] row prepended (dropped per example with probability
/// stochastic_depth_p during training), learned absolute positions, a
/// post-norm transformer encoder and a sigmoid head on the first output row.
class DetectorModel {
 public:
  using Example = DetectorExample;

  DetectorModel(DetectorConfig config, std::uint64_t seed);

  const DetectorConfig& config() const { return config_; }

  Eigen::MatrixXd project_surrogate(const Eigen::MatrixXd& states) const;
  Eigen::MatrixXd project_surrogate(const HiddenStateSequence& seq) const {
    return project_surrogate(seq.states);
  }
  /// Consumes one Bernoulli draw from `engine` iff training with an LM row.
  AssembledInput assemble_input(const Eigen::MatrixXd& projected,
                                const Eigen::RowVectorXd* lm_vec, bool training,
                                rng::Engine& engine) const;
  AssembledInput assemble_input(const Eigen::MatrixXd& projected, const ClsVector* lm_vec,
                                bool training, rng::Engine& engine) const {
    return assemble_input(projected, lm_vec ? &lm_vec->vector : nullptr, training, engine);
  }
  /// Inference-mode score of an assembled input.
  DetectionScore score(const AssembledInput& assembled, std::string_view pair_id = {}) const;
  /// End-to-end inference on precomputed features (LM row always present).
  DetectionScore score(const DetectorExample& example) const;
  Label predict_label(const DetectorExample& example) const { return score(example).predicted; }

  double accumulate_gradients(const DetectorExample& example, rng::Engine& engine);
  /// BCE loss and its gradient. With `mode.training` false no dropout is
  /// drawn and the LM row is kept, so the result is a smooth deterministic
  /// function of the parameters.
  double loss_and_gradients(const DetectorExample& example, const nn::Mode& mode);

  nn::ParameterList parameters();
  std::uint64_t parameter_digest() const;

  nn::Linear& surrogate_projection() { return surrogate_projection_; }
  std::optional<nn::Linear>& lm_projection() { return lm_projection_; }
  nn::Parameter& positions() { return positions_; }
  nn::TransformerEncoder& encoder() { return encoder_; }
  nn::Linear& head() { return head_; }

  struct ArtifactInfo {
    std::string surrogate_model_id;
    std::optional<std::string> lm_model_id;
    std::optional<std::string> lm_checkpoint;
    std::uint64_t training_seed = 0;
    double dev_accuracy = 0.0;
    int best_epoch = 0;
    std::string config_digest;
    std::set<std::string> train_langs;
    std::set<std::string> train_systems;
  };
  void save(const std::filesystem::path& dir, const ArtifactInfo& info) const;
  static DetectorModel load(const std::filesystem::path& dir, ArtifactInfo* info = nullptr);

 private:
  struct Forward {
    nn::Matrix pos_mask;
    nn::TransformerEncoder::Cache cache;
    nn::Matrix first_row;
    nn::Matrix head_mask;
    double logit = 0.0;
  };
  Forward forward(const AssembledInput& input, const nn::Mode& mode, bool keep_cache) const;

  DetectorConfig config_;
  nn::Linear surrogate_projection_;
  std::optional<nn::Linear> lm_projection_;
  nn::Parameter positions_;
  nn::TransformerEncoder encoder_;
  nn::Linear head_;
};

std::string to_json(const DetectorConfig& config);
DetectorConfig detector_config_from_json(std::string_view json);

}  // namespace smatd
