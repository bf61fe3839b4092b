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

// Minimal dense building blocks with hand-written backward passes. Every
// module follows the same protocol: forward() optionally fills a Cache, and
// backward() consumes that cache, accumulates parameter gradients into
// Parameter::grad and returns the gradient w.r.t. its input. Matrices are
// row-per-token (n x d).

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"

namespace smatd::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name_, Matrix value_)
      : name(std::move(name_)), value(std::move(value_)),
        grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

/// Fills `m` with U(-bound, bound).
void init_uniform(Matrix& m, double bound, rng::Engine& engine);
/// Glorot/Xavier uniform bound.
double xavier_bound(Index fan_in, Index fan_out);

/// Forward-pass mode. In training mode dropout masks are drawn from `engine`.
struct Mode {
  bool training = false;
  rng::Engine* engine = nullptr;
};

/// Inverted-dropout mask (entries 0 or 1/(1-p)); empty when dropout is off.
Matrix dropout_mask(Index rows, Index cols, double p, const Mode& mode);
inline void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

double gelu(double x);
double gelu_grad(double x);

class Linear {
 public:
  Linear() = default;
  /// Weight is out x in with Xavier-uniform init, bias zero.
  Linear(const std::string& name, Index in, Index out, rng::Engine& engine);

  Matrix forward(const Matrix& x) const;
  /// Accumulates dW, db and returns dx.
  Matrix backward(const Matrix& x, const Matrix& dy);
  /// Same as backward() without forming dx.
  void accumulate(const Matrix& x, const Matrix& dy);

  Index in_features() const { return weight.value.cols(); }
  Index out_features() const { return weight.value.rows(); }
  void collect(ParameterList& out);

  Parameter weight;
  Parameter bias;
};

class LayerNorm {
 public:
  static constexpr double kEps = 1e-5;
  struct Cache {
    Matrix xhat;
    Eigen::VectorXd inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index dim);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParameterList& out);

  Parameter gamma;
  Parameter beta;
};

class MultiHeadSelfAttention {
 public:
  struct Cache {
    Matrix x, q, k, v;
    std::vector<Matrix> probs;  // softmax output per head
    std::vector<Matrix> masks;  // attention dropout per head (may be empty)
    Matrix context;             // concatenated head outputs, pre output-proj
  };

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, Index d_model, int heads, double dropout,
                         rng::Engine& engine);

  Matrix forward(const Matrix& x, const Mode& mode, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParameterList& out);

  Linear query, key, value, output;
  int heads = 1;
  double dropout = 0.0;
};

class FeedForward {
 public:
  struct Cache {
    Matrix x, pre, hidden, mask;
  };

  FeedForward() = default;
  FeedForward(const std::string& name, Index d_model, Index ffn_dim, double dropout,
              rng::Engine& engine);

  Matrix forward(const Matrix& x, const Mode& mode, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParameterList& out);

  Linear in, out;
  double dropout = 0.0;
};

struct EncoderConfig {
  Index d_model = 512;
  int layers = 3;
  int heads = 4;
  Index ffn_dim = 2048;
  double dropout = 0.1;
};

/// Post-norm transformer encoder layer (attention, add & norm, GELU
/// feed-forward, add & norm) with dropout on both residual branches.
class EncoderLayer {
 public:
  struct Cache {
    MultiHeadSelfAttention::Cache attention;
    Matrix attention_mask;
    LayerNorm::Cache norm1;
    FeedForward::Cache ffn;
    Matrix ffn_mask;
    LayerNorm::Cache norm2;
  };

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, const EncoderConfig& config, rng::Engine& engine);

  Matrix forward(const Matrix& x, const Mode& mode, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParameterList& out);

  MultiHeadSelfAttention attention;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;
  double dropout = 0.0;
};

class TransformerEncoder {
 public:
  struct Cache {
    std::vector<EncoderLayer::Cache> layers;
  };

  TransformerEncoder() = default;
  TransformerEncoder(const std::string& name, const EncoderConfig& config, rng::Engine& engine);

  /// Throws ErrorKind::kNumeric naming the first layer whose output is not
  /// finite.
  Matrix forward(const Matrix& x, const Mode& mode, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParameterList& out);

  std::vector<EncoderLayer> layers;
};

/// Decoupled-weight-decay Adam. Holds raw pointers into the model that owns
/// the parameters; that model must outlive the optimizer and not move.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(ParameterList params, Options options);

  void zero_grad();
  void step(double lr);
  std::uint64_t steps() const { return steps_; }
  const Options& options() const { return options_; }

 private:
  ParameterList params_;
  Options options_;
  std::vector<Matrix> m_, v_;
  std::uint64_t steps_ = 0;
};

/// FNV-1a over names, shapes and values of every parameter.
std::uint64_t digest(const ParameterList& params);
std::vector<io::NamedTensor> export_parameters(const ParameterList& params);
/// Copies values by name; throws kDimension on shape mismatch and kIo when a
/// parameter is absent from the container.
void import_parameters(const ParameterList& params, const io::Container& container);

}  // namespace smatd::nn
