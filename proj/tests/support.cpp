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
#include "support.hpp"

#include <atomic>
#include <random>

#include <unistd.h>

#include "smatd/rng.hpp"

namespace smatd::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("smatd-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

SentencePair make_pair(std::string id, Label label, std::string producer, std::string source,
                       std::string target, std::string src_lang, std::string tgt_lang) {
  SentencePair p;
  p.id = std::move(id);
  p.label = label;
  p.producer = label == Label::kHT ? std::string(kHumanProducer)
                                   : (producer.empty() ? "sysA" : std::move(producer));
  p.source_text = std::move(source);
  p.target_text = std::move(target);
  p.src_lang = std::move(src_lang);
  p.tgt_lang = std::move(tgt_lang);
  p.edition = "toy";
  return p;
}

std::vector<SentencePair> toy_corpus(const ToyCorpusSpec& opts) {
  auto engine = rng::stream(opts.seed, "toy-corpus");
  std::uniform_int_distribution<std::size_t> length(opts.min_words, opts.max_words);
  std::uniform_int_distribution<int> vocab(0, 399);
  auto sentence = [&](std::string_view prefix, std::size_t n) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back(std::string(prefix) + std::to_string(vocab(engine)));
    return words;
  };
  auto join = [](const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  };

  std::vector<SentencePair> out;
  for (std::size_t s = 0; s < opts.sources; ++s) {
    const auto id = opts.id_prefix + std::to_string(s);
    const auto source = join(sentence("q", length(engine)));
    const auto target = sentence("w", length(engine));
    out.push_back(make_pair(id, Label::kHT, "", source, join(target), opts.src_lang, opts.tgt_lang));
    for (const auto& system : opts.systems) {
      auto mt = target;
      if (opts.mark_mt) {
        std::uniform_int_distribution<std::size_t> where(0, mt.size() - 1);
        mt[where(engine)] += "~";
      }
      out.push_back(make_pair(id, Label::kMT, system, source, join(mt), opts.src_lang, opts.tgt_lang));
    }
  }
  return out;
}

ToySurrogateConfig signal_surrogate(int signal_block, double scale, int layers, int dim) {
  ToySurrogateConfig c;
  c.hidden_dim = dim;
  c.layers = layers;
  c.signal_block = signal_block;
  c.signal_scale = scale;
  return c;
}

DetectorConfig small_detector(int surrogate_dim, int block) {
  DetectorConfig c;
  c.d_model = 16;
  c.layers = 1;
  c.heads = 2;
  c.ffn_dim = 32;
  c.max_positions = 64;
  c.block = block;
  c.surrogate_dim = surrogate_dim;
  return c;
}

TrainConfig fast_training() {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.warmup_steps = 20;
  c.patience_epochs = 3;
  c.batch_size = 16;
  c.seeds = {1};
  c.max_epochs = 30;
  return c;
}

std::vector<DetectorExample> features(const SurrogateAdapter& surrogate,
                                      const std::vector<SentencePair>& pairs, int block) {
  std::vector<DetectorExample> out;
  for (const auto& p : pairs) {
    auto seq = surrogate.extract_states(p.view(), block);
    out.push_back({p.key(), p.label, std::move(seq.states), std::nullopt});
  }
  return out;
}

double nearest_centroid_accuracy(const std::vector<DetectorExample>& train,
                                 const std::vector<DetectorExample>& eval) {
  const auto d = train.front().states.cols();
  Eigen::RowVectorXd c_ht = Eigen::RowVectorXd::Zero(d), c_mt = Eigen::RowVectorXd::Zero(d);
  double n_ht = 0, n_mt = 0;
  for (const auto& ex : train) {
    const Eigen::RowVectorXd mean = ex.states.colwise().mean();
    if (ex.label == Label::kHT) {
      c_ht += mean;
      ++n_ht;
    } else {
      c_mt += mean;
      ++n_mt;
    }
  }
  c_ht /= n_ht;
  c_mt /= n_mt;
  std::size_t correct = 0;
  for (const auto& ex : eval) {
    const Eigen::RowVectorXd mean = ex.states.colwise().mean();
    const Label guess = (mean - c_ht).squaredNorm() < (mean - c_mt).squaredNorm() ? Label::kHT : Label::kMT;
    correct += guess == ex.label;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

double accuracy_of(const DetectorModel& model, const std::vector<DetectorExample>& eval) {
  std::size_t correct = 0;
  for (const auto& ex : eval) correct += model.predict_label(ex) == ex.label;
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace smatd::testing
