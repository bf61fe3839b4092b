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
#include <string>
#include <vector>

#include "smatd/corpus.hpp"
#include "smatd/detector.hpp"
#include "smatd/surrogate.hpp"
#include "smatd/trainer.hpp"

namespace smatd::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

SentencePair make_pair(std::string id, Label label, std::string producer = "",
                       std::string source = "ein satz", std::string target = "a sentence",
                       std::string src_lang = "de", std::string tgt_lang = "en");

/// Synthetic parallel corpus. Each source id gets one HT target and one MT
/// target per system. With `mark_mt`, every MT target equals the HT target
/// with one word suffixed by '~' (the toy surrogate's marked twin), so the
/// classes differ only where the toy injects its signal.
struct ToyCorpusSpec {
  std::size_t sources = 20;
  std::vector<std::string> systems{"sysA"};
  std::string src_lang = "de";
  std::string tgt_lang = "en";
  std::uint64_t seed = 1;
  std::size_t min_words = 4;
  std::size_t max_words = 8;
  bool mark_mt = true;
  std::string id_prefix = "s";
};
std::vector<SentencePair> toy_corpus(const ToyCorpusSpec& opts);

/// Toy surrogate whose marked targets are shifted at `signal_block`.
ToySurrogateConfig signal_surrogate(int signal_block, double scale, int layers = 2, int dim = 16);

/// Small detector sized for desk-speed tests.
DetectorConfig small_detector(int surrogate_dim, int block = 0);
TrainConfig fast_training();

std::vector<DetectorExample> features(const SurrogateAdapter& surrogate,
                                      const std::vector<SentencePair>& pairs, int block);

/// Leave-nothing-out nearest-centroid accuracy on mean-pooled states.
double nearest_centroid_accuracy(const std::vector<DetectorExample>& train,
                                 const std::vector<DetectorExample>& eval);

double accuracy_of(const DetectorModel& model, const std::vector<DetectorExample>& eval);

}  // namespace smatd::testing
