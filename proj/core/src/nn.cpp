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
#include "smatd/nn.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "smatd/error.hpp"

namespace smatd::nn {

void init_uniform(Matrix& m, double bound, rng::Engine& engine) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(engine);
}

double xavier_bound(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Matrix dropout_mask(Index rows, Index cols, double p, const Mode& mode) {
  if (!mode.training || p <= 0.0) return {};
  if (mode.engine == nullptr) throw Error(ErrorKind::kUsage, "training mode requires an engine");
  Matrix mask(rows, cols);
  if (p >= 1.0) {
    mask.setZero();
    return mask;
  }
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*mode.engine) ? scale : 0.0;
  return mask;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Linear ---------------------------------------------------------------------

Linear::Linear(const std::string& name, Index in, Index out, rng::Engine& engine)
    : weight(name + ".weight", Matrix(out, in)), bias(name + ".bias", Matrix::Zero(1, out)) {
  init_uniform(weight.value, xavier_bound(in, out), engine);
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != in_features()) {
    throw Error(ErrorKind::kDimension, weight.name + ": input width " + std::to_string(x.cols()) +
                                           " != " + std::to_string(in_features()));
  }
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

void Linear::accumulate(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  accumulate(x, dy);
  return dy * weight.value;
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// LayerNorm ------------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, Index dim)
    : gamma(name + ".gamma", Matrix::Ones(1, dim)), beta(name + ".beta", Matrix::Zero(1, dim)) {}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + kEps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() +
             beta.value.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  const double dim = static_cast<double>(dy.cols());
  const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum();
  Matrix dx = (dxhat * dim).colwise() - sum_d;
  dx -= (cache.xhat.array().colwise() * sum_dx.array()).matrix();
  dx.array().colwise() *= cache.inv_std.array() / dim;
  return dx;
}

void LayerNorm::collect(ParameterList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// MultiHeadSelfAttention -----------------------------------------------------

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name, Index d_model,
                                               int heads_, double dropout_, rng::Engine& engine)
    : query(name + ".query", d_model, d_model, engine),
      key(name + ".key", d_model, d_model, engine),
      value(name + ".value", d_model, d_model, engine),
      output(name + ".output", d_model, d_model, engine),
      heads(heads_),
      dropout(dropout_) {
  if (heads <= 0 || d_model % heads != 0) {
    throw Error(ErrorKind::kConfiguration, name + ": d_model must be divisible by heads");
  }
}

Matrix MultiHeadSelfAttention::forward(const Matrix& x, const Mode& mode, Cache* cache) const {
  const Index n = x.rows();
  const Index d = query.out_features();
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix q = query.forward(x);
  Matrix k = key.forward(x);
  Matrix v = value.forward(x);
  Matrix context(n, d);
  if (cache) {
    cache->probs.resize(heads);
    cache->masks.resize(heads);
  }
  for (int h = 0; h < heads; ++h) {
    Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
    scores = (scores.colwise() - row_max).array().exp();
    const Eigen::VectorXd row_sum = scores.rowwise().sum();
    scores.array().colwise() /= row_sum.array();
    Matrix mask = dropout_mask(n, n, dropout, mode);
    Matrix attended = scores;
    apply_mask(attended, mask);
    context.middleCols(h * dh, dh).noalias() = attended * v.middleCols(h * dh, dh);
    if (cache) {
      cache->probs[h] = std::move(scores);
      cache->masks[h] = std::move(mask);
    }
  }
  Matrix y = output.forward(context);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
  }
  return y;
}

Matrix MultiHeadSelfAttention::backward(const Cache& cache, const Matrix& dy) {
  const Index n = cache.x.rows();
  const Index d = query.out_features();
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix dcontext = output.backward(cache.context, dy);
  Matrix dq(n, d), dk(n, d), dv(n, d);
  for (int h = 0; h < heads; ++h) {
    const auto& probs = cache.probs[h];
    const auto& mask = cache.masks[h];
    const Matrix d_out = dcontext.middleCols(h * dh, dh);
    Matrix attended = probs;
    apply_mask(attended, mask);
    dv.middleCols(h * dh, dh).noalias() = attended.transpose() * d_out;
    Matrix dprobs = d_out * cache.v.middleCols(h * dh, dh).transpose();
    apply_mask(dprobs, mask);
    const Eigen::VectorXd inner = (dprobs.array() * probs.array()).rowwise().sum();
    const Matrix dscores = probs.array() * (dprobs.colwise() - inner).array();
    dq.middleCols(h * dh, dh).noalias() = dscores * cache.k.middleCols(h * dh, dh) * scale;
    dk.middleCols(h * dh, dh).noalias() =
        dscores.transpose() * cache.q.middleCols(h * dh, dh) * scale;
  }
  Matrix dx = query.backward(cache.x, dq);
  dx += key.backward(cache.x, dk);
  dx += value.backward(cache.x, dv);
  return dx;
}

void MultiHeadSelfAttention::collect(ParameterList& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

// FeedForward ----------------------------------------------------------------

FeedForward::FeedForward(const std::string& name, Index d_model, Index ffn_dim, double dropout_,
                         rng::Engine& engine)
    : in(name + ".in", d_model, ffn_dim, engine),
      out(name + ".out", ffn_dim, d_model, engine),
      dropout(dropout_) {}

Matrix FeedForward::forward(const Matrix& x, const Mode& mode, Cache* cache) const {
  Matrix pre = in.forward(x);
  Matrix hidden = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix mask = dropout_mask(hidden.rows(), hidden.cols(), dropout, mode);
  apply_mask(hidden, mask);
  Matrix y = out.forward(hidden);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->mask = std::move(mask);
  }
  return y;
}

Matrix FeedForward::backward(const Cache& cache, const Matrix& dy) {
  Matrix dhidden = out.backward(cache.hidden, dy);
  apply_mask(dhidden, cache.mask);
  const Matrix dpre =
      dhidden.array() * cache.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  return in.backward(cache.x, dpre);
}

void FeedForward::collect(ParameterList& out_params) {
  in.collect(out_params);
  out.collect(out_params);
}

// EncoderLayer ---------------------------------------------------------------

EncoderLayer::EncoderLayer(const std::string& name, const EncoderConfig& config,
                           rng::Engine& engine)
    : attention(name + ".attention", config.d_model, config.heads, config.dropout, engine),
      norm1(name + ".norm1", config.d_model),
      ffn(name + ".ffn", config.d_model, config.ffn_dim, config.dropout, engine),
      norm2(name + ".norm2", config.d_model),
      dropout(config.dropout) {}

Matrix EncoderLayer::forward(const Matrix& x, const Mode& mode, Cache* cache) const {
  Matrix a = attention.forward(x, mode, cache ? &cache->attention : nullptr);
  Matrix mask1 = dropout_mask(a.rows(), a.cols(), dropout, mode);
  apply_mask(a, mask1);
  const Matrix h1 = norm1.forward(x + a, cache ? &cache->norm1 : nullptr);
  Matrix f = ffn.forward(h1, mode, cache ? &cache->ffn : nullptr);
  Matrix mask2 = dropout_mask(f.rows(), f.cols(), dropout, mode);
  apply_mask(f, mask2);
  Matrix y = norm2.forward(h1 + f, cache ? &cache->norm2 : nullptr);
  if (cache) {
    cache->attention_mask = std::move(mask1);
    cache->ffn_mask = std::move(mask2);
  }
  return y;
}

Matrix EncoderLayer::backward(const Cache& cache, const Matrix& dy) {
  const Matrix dr2 = norm2.backward(cache.norm2, dy);
  Matrix df = dr2;
  apply_mask(df, cache.ffn_mask);
  const Matrix dh1 = dr2 + ffn.backward(cache.ffn, df);
  const Matrix dr1 = norm1.backward(cache.norm1, dh1);
  Matrix da = dr1;
  apply_mask(da, cache.attention_mask);
  return dr1 + attention.backward(cache.attention, da);
}

void EncoderLayer::collect(ParameterList& out) {
  attention.collect(out);
  norm1.collect(out);
  ffn.collect(out);
  norm2.collect(out);
}

// TransformerEncoder ---------------------------------------------------------

TransformerEncoder::TransformerEncoder(const std::string& name, const EncoderConfig& config,
                                       rng::Engine& engine) {
  if (config.layers < 1) throw Error(ErrorKind::kConfiguration, name + ": needs >= 1 layer");
  layers.reserve(config.layers);
  for (int i = 0; i < config.layers; ++i) {
    layers.emplace_back(name + ".layer" + std::to_string(i), config, engine);
  }
}

Matrix TransformerEncoder::forward(const Matrix& x, const Mode& mode, Cache* cache) const {
  if (cache) cache->layers.resize(layers.size());
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h, mode, cache ? &cache->layers[i] : nullptr);
    if (!h.allFinite()) {
      throw Error(ErrorKind::kNumeric,
                  "non-finite activations after encoder layer " + std::to_string(i));
    }
  }
  return h;
}

Matrix TransformerEncoder::backward(const Cache& cache, const Matrix& dy) {
  Matrix d = dy;
  for (std::size_t i = layers.size(); i-- > 0;) d = layers[i].backward(cache.layers[i], d);
  return d;
}

void TransformerEncoder::collect(ParameterList& out) {
  for (auto& layer : layers) layer.collect(out);
}

// AdamW ----------------------------------------------------------------------

AdamW::AdamW(ParameterList params, Options options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    if (options_.weight_decay != 0.0) p.value *= 1.0 - lr * options_.weight_decay;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * p.grad;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

// Persistence ----------------------------------------------------------------

std::uint64_t digest(const ParameterList& params) {
  std::uint64_t h = rng::fnv1a("smatd-params");
  for (const auto* p : params) {
    h = rng::fnv1a(p->name, h);
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    h = rng::fnv1a(shape, sizeof(shape), h);
    h = rng::fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double), h);
  }
  return h;
}

std::vector<io::NamedTensor> export_parameters(const ParameterList& params) {
  std::vector<io::NamedTensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back({p->name, p->value});
  return out;
}

void import_parameters(const ParameterList& params, const io::Container& container) {
  for (auto* p : params) {
    const auto* t = container.find(p->name);
    if (t == nullptr) throw Error(ErrorKind::kIo, "checkpoint lacks parameter " + p->name);
    if (t->value.rows() != p->value.rows() || t->value.cols() != p->value.cols()) {
      throw Error(ErrorKind::kDimension, "checkpoint shape mismatch for " + p->name);
    }
    p->value = t->value;
    p->zero_grad();
  }
}

}  // namespace smatd::nn
