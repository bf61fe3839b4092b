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
#include <benchmark/benchmark.h>

#include <random>

#include "smatd/detector.hpp"
#include "smatd/evaluation.hpp"
#include "smatd/nn.hpp"
#include "smatd/rng.hpp"
#include "smatd/surrogate.hpp"

namespace {

using namespace smatd;

DetectorConfig bench_config(int d_model) {
  DetectorConfig c;
  c.d_model = d_model;
  c.layers = 2;
  c.heads = 4;
  c.ffn_dim = 4 * d_model;
  c.max_positions = 256;
  c.surrogate_dim = 64;
  return c;
}

DetectorExample random_example(Eigen::Index rows, Eigen::Index dim) {
  auto engine = rng::stream(1, "bench");
  Eigen::MatrixXd states(rows, dim);
  nn::init_uniform(states, 1.0, engine);
  return {"b", Label::kMT, states, std::nullopt};
}

void BM_DetectorScore(benchmark::State& state) {
  const DetectorModel model(bench_config(static_cast<int>(state.range(1))), 1);
  const auto ex = random_example(state.range(0), 64);
  for (auto _ : state) benchmark::DoNotOptimize(model.score(ex).p_ht);
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DetectorScore)->Args({32, 64})->Args({128, 64})->Args({32, 128});

void BM_DetectorBackward(benchmark::State& state) {
  DetectorModel model(bench_config(64), 1);
  const auto ex = random_example(state.range(0), 64);
  auto engine = rng::stream(2, "bench");
  for (auto _ : state) benchmark::DoNotOptimize(model.accumulate_gradients(ex, engine));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DetectorBackward)->Arg(32)->Arg(128);

void BM_ToyExtraction(benchmark::State& state) {
  ToySurrogateConfig cfg;
  cfg.hidden_dim = 64;
  cfg.layers = 4;
  const ToySurrogate toy(cfg);
  const SentencePair pair{"p", "de", "en", "ein kleiner satz fuer den test", "a small sentence for the test run",
                          Label::kHT, "human", ""};
  for (auto _ : state) benchmark::DoNotOptimize(toy.extract_states(pair.view(), 4).states.sum());
}
BENCHMARK(BM_ToyExtraction);

void BM_ApproxRandomization(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto engine = rng::stream(3, "bench");
  std::bernoulli_distribution coin(0.7);
  std::vector<bool> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = coin(engine);
    b[i] = coin(engine);
  }
  for (auto _ : state) benchmark::DoNotOptimize(approx_randomization(a, b, 1000).p_value);
}
BENCHMARK(BM_ApproxRandomization)->Arg(100)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
