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
// Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero when any criterion fails.
#include <algorithm>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "smatd/cli/commands.hpp"
#include "smatd/corpus.hpp"
#include "smatd/detector.hpp"
#include "smatd/error.hpp"
#include "smatd/evaluation.hpp"
#include "smatd/rng.hpp"
#include "smatd/surrogate.hpp"
#include "smatd/tensor_io.hpp"
#include "smatd/trainer.hpp"
#include "smatd/training.hpp"
#include "support.hpp"

namespace {

using namespace smatd;
namespace fs = std::filesystem;

// Pinned tolerances.
constexpr double kZ99 = 2.5758293035489004;
constexpr double kMinSnr = 3.0;
constexpr double kMinDevAccuracy = 0.95;
constexpr double kMinCentroidAccuracy = 0.99;
constexpr int kMaxEpochs = 50;
constexpr double kMaxSeconds = 120.0;
constexpr double kArTolSmall = 0.02;
constexpr double kArTolLarge = 0.005;
constexpr double kLrRelTol = 1e-12;
constexpr double kPplRelTol = 1e-6;
constexpr double kGradRelTol = 1e-4;

struct Outcome {
  enum Status { kPass, kFail, kSkip } status;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Outcome::kPass : Outcome::kFail, std::move(detail)}; }

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

// 1. Synthetic separability through the train command.
Outcome separability() {
  const auto start = std::chrono::steady_clock::now();
  auto toy_cfg = testing::signal_surrogate(0, 2.0, 1, 16);
  const ToySurrogate toy(toy_cfg);
  const auto train = testing::toy_corpus({.sources = 500, .seed = 101});
  const auto dev = testing::toy_corpus({.sources = 100, .seed = 102, .id_prefix = "d"});

  // Per-token SNR: twin shift length over the HT spread along the shift.
  const auto tx = testing::features(toy, train, 0);
  std::map<std::string, const DetectorExample*> ht;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label == Label::kHT) ht[train[i].id] = &tx[i];
  }
  Eigen::RowVectorXd shift = Eigen::RowVectorXd::Zero(tx.front().states.cols());
  double rows = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label != Label::kMT) continue;
    shift += (tx[i].states - ht.at(train[i].id)->states).colwise().sum();
    rows += static_cast<double>(tx[i].states.rows());
  }
  shift /= rows;
  const Eigen::RowVectorXd dir = shift.normalized();
  std::vector<double> proj;
  for (const auto& [id, ex] : ht) {
    for (Eigen::Index r = 0; r < ex->states.rows(); ++r) proj.push_back(ex->states.row(r).dot(dir));
  }
  const auto spread = variability_report(proj);
  const double snr = shift.norm() / spread.sd;

  const double centroid = testing::nearest_centroid_accuracy(tx, testing::features(toy, dev, 0));

  testing::TempDir dir_ws;
  write_corpus(dir_ws / "train.jsonl", train);
  write_corpus(dir_ws / "dev.jsonl", dev);
  const std::string config = "mode = smatd\ntrain = train.jsonl\ndev = dev.jsonl\n"
                             "surrogate = " + toy_cfg.model_id() + "\nblock = 0\n"
                             "detector.d_model = 16\ndetector.layers = 1\ndetector.heads = 2\n"
                             "detector.ffn_dim = 32\ndetector.max_positions = 64\n"
                             "train.learning_rate = 0.003\ntrain.warmup_steps = 20\n"
                             "train.patience = 3\ntrain.batch_size = 16\n"
                             "train.max_epochs = " + std::to_string(kMaxEpochs) + "\ntrain.seeds = 1\n";
  io::write_text_atomic(dir_ws / "exp.conf", config);
  std::ostringstream log;
  const int code = cli::cmd_train(cli::ExperimentConfig::load(dir_ws / "exp.conf"), log);
  DetectorModel::ArtifactInfo info;
  DetectorModel::load(dir_ws / "out" / "model", &info);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = code == cli::kExitOk && snr >= kMinSnr && info.dev_accuracy >= kMinDevAccuracy &&
                  info.best_epoch <= kMaxEpochs && centroid >= kMinCentroidAccuracy &&
                  seconds < kMaxSeconds;
  return pass_if(ok, "pairs " + std::to_string(train.size()) + ", SNR " + fmt(snr, 4) + ", dev " +
                         fmt(info.dev_accuracy) + " at epoch " + std::to_string(info.best_epoch) +
                         ", centroid " + fmt(centroid) + ", " + fmt(seconds, 3) + " s");
}

double exact_ar(const std::vector<bool>& a, const std::vector<bool>& b) {
  const std::size_t n = a.size();
  auto stat = [&](std::uint64_t mask) {
    long d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool s = (mask >> i) & 1U;
      d += static_cast<long>(s ? b[i] : a[i]) - static_cast<long>(s ? a[i] : b[i]);
    }
    return std::labs(d);
  };
  const long obs = stat(0);
  std::uint64_t hits = 0;
  for (std::uint64_t m = 0; m < (std::uint64_t{1} << n); ++m) hits += stat(m) >= obs;
  return static_cast<double>(hits) / static_cast<double>(std::uint64_t{1} << n);
}

// 2. Approximate randomization against enumeration.
Outcome significance() {
  auto engine = rng::stream(2026, "acceptance-ar");
  std::bernoulli_distribution coin(0.5);
  double worst4 = 0, worst12 = 0;
  for (int t = 0; t < 20; ++t) {
    for (const std::size_t n : {std::size_t{4}, std::size_t{12}}) {
      std::vector<bool> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = coin(engine);
        b[i] = coin(engine);
      }
      const double err = std::abs(approx_randomization(a, b, 10000, static_cast<std::uint64_t>(t)).p_value -
                                  exact_ar(a, b));
      (n == 4 ? worst4 : worst12) = std::max(n == 4 ? worst4 : worst12, err);
    }
  }
  const std::vector<bool> all(12, true), none(12, false);
  const double extreme = std::abs(approx_randomization(all, none).p_value - exact_ar(all, none));
  // At n = 12 the Monte Carlo SD of p near 0.5 is ~0.005, so the tight bound
  // applies to the all-right/all-wrong vector and random vectors get ±0.02.
  const bool ok = worst4 <= kArTolSmall && worst12 <= kArTolSmall && extreme <= kArTolLarge;
  return pass_if(ok, "max |err| n=4 " + fmt(worst4, 3) + ", n=12 random " + fmt(worst12, 3) +
                         ", n=12 extreme " + fmt(extreme, 3));
}

// 3. Learning-rate schedule closed form.
Outcome scheduler() {
  const auto c = TrainConfig::detector_defaults();
  double worst = 0;
  for (const std::uint64_t s : {1, 100, 400, 1600, 10000}) {
    const double step = static_cast<double>(s), w = static_cast<double>(c.warmup_steps);
    const double want = c.learning_rate * std::min(step / w, std::sqrt(w / step));
    worst = std::max(worst, rel_err(lr_at(s, c), want));
  }
  const double jump = std::max(std::abs(lr_at(400, c) - lr_at(399, c)), std::abs(lr_at(401, c) - lr_at(400, c)));
  const bool ok = worst <= kLrRelTol && jump <= c.learning_rate / static_cast<double>(c.warmup_steps) + 1e-18;
  return pass_if(ok, "max rel err " + fmt(worst, 3) + ", knee step " + fmt(jump, 3));
}

// 4. Stochastic-depth inclusion frequency.
Outcome stochastic_depth() {
  DetectorConfig cfg;
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.ffn_dim = 16;
  cfg.max_positions = 32;
  cfg.surrogate_dim = 4;
  cfg.lm_dim = 4;
  cfg.stochastic_depth_p = 0.7;
  const DetectorModel model(cfg, 1);
  const Eigen::MatrixXd projected = Eigen::MatrixXd::Ones(3, 8);
  const Eigen::RowVectorXd lm = Eigen::RowVectorXd::Ones(4);
  auto engine = rng::stream(4, "acceptance-depth");
  const int n = 10000;
  int train_in = 0, infer_in = 0;
  for (int i = 0; i < n; ++i) {
    train_in += model.assemble_input(projected, &lm, true, engine).lm_row_included;
    infer_in += model.assemble_input(projected, &lm, false, engine).lm_row_included;
  }
  const double rate = train_in / static_cast<double>(n);
  const double half = kZ99 * std::sqrt(0.3 * 0.7 / n);
  const bool ok = std::abs(rate - 0.3) <= half && infer_in == n;
  return pass_if(ok, "training inclusion " + fmt(rate, 4) + " (CI 0.3 ± " + fmt(half, 3) +
                         "), inference " + std::to_string(infer_in) + "/" + std::to_string(n));
}

// 5. Temperature sampler frequencies.
Outcome temperature() {
  using Decimal = boost::multiprecision::cpp_dec_float_50;
  const Decimal wa = boost::multiprecision::pow(Decimal("0.9"), Decimal("0.3"));
  const Decimal wb = boost::multiprecision::pow(Decimal("0.1"), Decimal("0.3"));
  const double q = static_cast<double>(wa / (wa + wb));
  std::map<LangPair, CorpusSplit> splits;
  const std::pair<const char*, std::size_t> langs[] = {{"de", 90}, {"fi", 10}};
  std::map<LangPair, std::size_t> sizes;
  std::uint64_t seed = 1;
  for (const auto& [src, n] : langs) {
    auto split = split_from_pairs(
        testing::toy_corpus({.sources = n, .src_lang = src, .seed = seed++, .id_prefix = src}), SplitName::kTrain);
    sizes[split.lang_pair] = split.ht_count();
    splits.emplace(split.lang_pair, std::move(split));
  }
  const auto w = LanguageWeights::from_sizes(sizes, 0.3);
  const double n = 10000;
  const auto s = sample_multilingual_epoch(splits, w, 1, 5, 10000);
  const double got = static_cast<double>(s.language_counts.at({"de", "en"})) / n;
  const double half = kZ99 * std::sqrt(q * (1 - q) / n);
  const double weight_err = std::abs(w.sampling_weights().at({"de", "en"}) - q);
  const LanguageWeights uniform{{{{"de", "en"}, 1.0 / 3}, {{"fi", "en"}, 1.0 / 3}, {{"ru", "en"}, 1.0 / 3}}, 0.3};
  bool fixed = true;
  for (const auto& [lp, v] : uniform.sampling_weights()) fixed = fixed && std::abs(v - 1.0 / 3) < 1e-15;
  const bool ok = std::abs(got - q) <= half && weight_err < 1e-15 && fixed;
  return pass_if(ok, "de share " + fmt(got, 4) + " vs " + fmt(q, 10) + " ± " + fmt(half, 3) +
                         ", weight err " + fmt(weight_err, 2) + ", uniform fixed point " +
                         (fixed ? "yes" : "no"));
}

// 6. Perplexity algebra.
Outcome perplexity() {
  auto cfg = ToySurrogateConfig{};
  cfg.output_scale = 0.0;
  const ToySurrogate uniform(cfg);
  const double vocab = static_cast<double>(uniform.vocab_size());
  const auto pair = testing::make_pair("p", Label::kHT, "", "ein kurzer satz", "a short sentence here");
  const double ppl_uniform = per_word_perplexity(uniform, pair).ppl;
  const std::vector<double> lp{std::log(0.5), std::log(0.25)};
  const double two = perplexity_from_log_probs(lp).ppl;
  const double e1 = rel_err(ppl_uniform, vocab), e2 = rel_err(two, 2 * std::sqrt(2.0));
  return pass_if(e1 <= kPplRelTol && e2 <= kPplRelTol,
                 "uniform rel err " + fmt(e1, 3) + " (V = " + fmt(vocab) + "), 2√2 rel err " + fmt(e2, 3));
}

// 7. Detector gradients against central differences.
Outcome gradients() {
  DetectorConfig cfg;
  cfg.d_model = 8;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.ffn_dim = 16;
  cfg.max_positions = 32;
  cfg.surrogate_dim = 6;
  cfg.lm_dim = 4;
  double worst = 0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    DetectorModel model(cfg, 100 + trial);
    auto engine = rng::stream(trial, "acceptance-grad");
    Eigen::MatrixXd states(static_cast<Eigen::Index>(3 + trial), 6);
    nn::init_uniform(states, 1.0, engine);
    Eigen::MatrixXd cls(1, 4);
    nn::init_uniform(cls, 1.0, engine);
    const DetectorExample ex{"g", trial % 2 ? Label::kHT : Label::kMT, states, Eigen::RowVectorXd(cls)};
    for (auto* p : model.parameters()) p->zero_grad();
    model.loss_and_gradients(ex, nn::Mode{});
    auto loss = [&] {
      DetectorModel copy = model;
      return copy.loss_and_gradients(ex, nn::Mode{});
    };
    const double h = 1e-5;
    for (auto* p : model.parameters()) {
      const nn::Matrix analytic = p->grad;
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double saved = p->value.data()[i];
        p->value.data()[i] = saved + h;
        const double up = loss();
        p->value.data()[i] = saved - h;
        const double down = loss();
        p->value.data()[i] = saved;
        const double numeric = (up - down) / (2 * h), a = analytic.data()[i];
        worst = std::max(worst, std::abs(numeric - a) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
      }
    }
  }
  return pass_if(worst <= kGradRelTol, "max rel err " + fmt(worst, 3) + " over 5 inputs");
}

// 8. Early stopping, selection and variability semantics.
Outcome early_stopping() {
  const std::vector<double> script{0.50, 0.62, 0.70, 0.69, 0.70, 0.68, 0.66, 0.70, 0.64, 0.71, 0.80};
  EarlyStopping stop(6);
  int halted = 0;
  for (std::size_t e = 0; e < script.size(); ++e) {
    stop.observe(static_cast<int>(e + 1), script[e]);
    if (stop.exhausted()) {
      halted = static_cast<int>(e + 1);
      break;
    }
  }
  const std::vector<double> dev{0.71, 0.83, 0.83, 0.79};
  const auto chosen = select_best(dev);
  const auto v = variability_report(std::vector<double>{0.70, 0.74, 0.78});
  const auto u = variability_report(std::vector<double>{1.0, 2.0, 3.0});
  const bool ok = halted == 9 && stop.best_epoch() == 3 && chosen == 1 && std::abs(v.min - 0.70) < 1e-15 &&
                  std::abs(v.mean - 0.74) < 1e-15 && std::abs(v.max - 0.78) < 1e-15 &&
                  std::abs(v.sd - 0.04) < 1e-15 && u.sd == 1.0;
  return pass_if(ok, "halted at epoch " + std::to_string(halted) + " (best " + std::to_string(stop.best_epoch()) +
                         "), selected index " + std::to_string(chosen) + ", SD " + fmt(v.sd, 6) + " / " + fmt(u.sd));
}

// 9. Layer sweep finds the signal block.
Outcome layer_sweep_oracle() {
  int hits = 0;
  std::string picks;
  for (std::uint64_t rep = 1; rep <= 10; ++rep) {
    auto cfg = testing::signal_surrogate(2, 2.0, 2, 8);
    cfg.seed = 1000 + rep;
    const ToySurrogate toy(cfg);
    const auto train = testing::toy_corpus({.sources = 60, .seed = 2 * rep});
    const auto dev = testing::toy_corpus({.sources = 20, .seed = 2 * rep + 1, .id_prefix = "d"});
    const std::vector<SweepCondition> cond{{{"de", "en"}, "sysA"}};
    const std::vector<int> blocks{0, 1, 2};
    const auto r = layer_sweep(cond, blocks, [&](const SweepCondition&, int block) {
      return train_detector(DetectorModel(testing::small_detector(8, block), rep),
                            testing::features(toy, train, block), testing::features(toy, dev, block),
                            testing::fast_training(), rep)
          .history.best_dev_accuracy();
    });
    hits += r.best_block == 2;
    picks += std::to_string(r.best_block);
  }
  return pass_if(hits == 10, std::to_string(hits) + "/10 sweeps chose block 2 (picks " + picks + ")");
}

// 10. Needs a real pretrained surrogate.
Outcome real_surrogate() {
  try {
    load_surrogate("hf:facebook/nllb-200-distilled-600M");
  } catch (const Error& e) {
    return {Outcome::kSkip,
            "no pretrained surrogate backend in this build (" + std::string(e.what()) +
                "); the check needs a 600M-class seq2seq model, ~2,000 WMT pairs and an accelerator. "
                "The toy surrogate carries no natural-language signal, so the accuracy and perplexity "
                "directions cannot be measured here"};
  }
  return {Outcome::kFail, "a pretrained surrogate loaded but the check is not implemented"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"synthetic separability", separability},
      {"significance-test oracle", significance},
      {"scheduler algebra", scheduler},
      {"stochastic-depth frequency", stochastic_depth},
      {"temperature sampler", temperature},
      {"perplexity algebra", perplexity},
      {"gradient check", gradients},
      {"early stopping and selection", early_stopping},
      {"layer-sweep oracle", layer_sweep_oracle},
      {"pretrained surrogate direction", real_surrogate},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {Outcome::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = out.status == Outcome::kPass ? "PASS" : out.status == Outcome::kSkip ? "SKIP" : "FAIL";
    failed += out.status == Outcome::kFail;
    std::cout << tag << " criterion " << (i + 1) << " " << criteria[i].first << ": " << out.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
