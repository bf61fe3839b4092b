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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "smatd/error.hpp"
#include "smatd/evaluation.hpp"
#include "smatd/rng.hpp"
#include "smatd/tensor_io.hpp"
#include "smatd/training.hpp"
#include "support.hpp"

namespace smatd {
namespace {

using testing::TempDir;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an smatd::Error";
  return ErrorKind::kIo;
}

// Fraction of all 2^n swap patterns whose |acc_a - acc_b| reaches the
// observed value.
double exact_randomization_p(const std::vector<bool>& a, const std::vector<bool>& b) {
  const std::size_t n = a.size();
  auto stat = [&](std::uint64_t mask) {
    long diff = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool swap = (mask >> i) & 1U;
      diff += static_cast<long>(swap ? b[i] : a[i]) - static_cast<long>(swap ? a[i] : b[i]);
    }
    return std::labs(diff);
  };
  const long observed = stat(0);
  std::uint64_t hits = 0;
  const std::uint64_t patterns = std::uint64_t{1} << n;
  for (std::uint64_t m = 0; m < patterns; ++m) hits += stat(m) >= observed;
  return static_cast<double>(hits) / static_cast<double>(patterns);
}

std::vector<bool> random_bits(std::size_t n, rng::Engine& engine) {
  std::bernoulli_distribution coin(0.5);
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = coin(engine);
  return out;
}

TEST(Accuracy, Examples) {
  const std::vector<Label> all{Label::kHT, Label::kMT};
  EXPECT_EQ(accuracy(all, all), 1.0);
  const std::vector<Label> pred{Label::kHT, Label::kMT, Label::kHT, Label::kMT};
  const std::vector<Label> gold{Label::kHT, Label::kMT, Label::kMT, Label::kMT};
  EXPECT_EQ(accuracy(pred, gold), 0.75);
  EXPECT_EQ(kind_of([&] { accuracy(pred, all); }), ErrorKind::kInput);
  EXPECT_EQ(kind_of([] { accuracy({}, {}); }), ErrorKind::kInput);
}

TEST(ApproxRandomization, IdenticalVectorsGiveOne) {
  const std::vector<bool> v{true, false, true, true};
  const auto r = approx_randomization(v, v, 1000, 3);
  EXPECT_EQ(r.observed, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_FALSE(r.significant);
  EXPECT_EQ(r.iterations, 1000u);
}

TEST(ApproxRandomization, MatchesEnumerationForFourItems) {
  auto engine = rng::stream(1, "ar-oracle");
  for (int t = 0; t < 20; ++t) {
    const auto a = random_bits(4, engine), b = random_bits(4, engine);
    const auto r = approx_randomization(a, b, 10000, static_cast<std::uint64_t>(t));
    EXPECT_NEAR(r.p_value, exact_randomization_p(a, b), 0.02) << t;
  }
}

TEST(ApproxRandomization, MatchesEnumerationForTwelveItems) {
  const std::vector<bool> a(12, true), b(12, false);
  EXPECT_NEAR(approx_randomization(a, b).p_value, exact_randomization_p(a, b), 0.005);
  auto engine = rng::stream(2, "ar-oracle");
  for (int t = 0; t < 20; ++t) {
    const auto x = random_bits(12, engine), y = random_bits(12, engine);
    EXPECT_NEAR(approx_randomization(x, y, 10000, static_cast<std::uint64_t>(t)).p_value,
                exact_randomization_p(x, y), 0.02)
        << t;
  }
}

TEST(ApproxRandomization, SymmetricInSystems) {
  auto engine = rng::stream(3, "ar");
  for (int t = 0; t < 10; ++t) {
    const auto a = random_bits(30, engine), b = random_bits(30, engine);
    EXPECT_EQ(approx_randomization(a, b, 2000, 9).p_value, approx_randomization(b, a, 2000, 9).p_value);
  }
}

TEST(ApproxRandomization, AgreeingItemsDoNotChangeP) {
  auto engine = rng::stream(4, "ar");
  for (int t = 0; t < 10; ++t) {
    auto a = random_bits(8, engine), b = random_bits(8, engine);
    const double exact = exact_randomization_p(a, b);
    const double before = approx_randomization(a, b, 10000, 1).p_value;
    for (int k = 0; k < 6; ++k) {
      const bool both = k % 2 == 0;
      a.push_back(both);
      b.push_back(both);
    }
    EXPECT_DOUBLE_EQ(exact_randomization_p(a, b), exact);
    const double after = approx_randomization(a, b, 10000, 1).p_value;
    EXPECT_NEAR(after, exact, 0.02);
    EXPECT_NEAR(after, before, 0.03);
  }
}

TEST(ApproxRandomization, SignificanceFlagAndErrors) {
  const std::vector<bool> a(40, true), b(40, false);
  const auto r = approx_randomization(a, b, 1000, 1);
  EXPECT_LT(r.p_value, kSignificanceLevel);
  EXPECT_TRUE(r.significant);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_DOUBLE_EQ(r.observed, 1.0);
  EXPECT_EQ(kind_of([] { approx_randomization({true}, {true, false}); }), ErrorKind::kInput);
}

TEST(Variability, Examples) {
  const auto same = variability_report(std::vector<double>{.5, .5, .5});
  EXPECT_EQ(same.min, .5);
  EXPECT_EQ(same.mean, .5);
  EXPECT_EQ(same.max, .5);
  EXPECT_EQ(same.sd, 0.0);
  const auto r = variability_report(std::vector<double>{1, 2, 3});
  EXPECT_DOUBLE_EQ(r.sd, 1.0);
  EXPECT_EQ(r.n_runs, 3u);
  EXPECT_TRUE(r.sd_defined);
  const auto one = variability_report(std::vector<double>{0.7});
  EXPECT_EQ(one.sd, 0.0);
  EXPECT_FALSE(one.sd_defined);
  EXPECT_EQ(kind_of([] { variability_report(std::vector<double>{}); }), ErrorKind::kInput);
  const auto hand = variability_report(std::vector<double>{0.70, 0.74, 0.78});
  EXPECT_NEAR(hand.sd, 0.04, 1e-15);
  EXPECT_NEAR(hand.mean, 0.74, 1e-15);
}

TEST(Variability, JsonLayout) {
  const auto r = variability_report(std::vector<double>{1, 2, 3});
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto j = to_json(r, seeds, "test");
  for (const auto* key : {"\"min\"", "\"mean\"", "\"max\"", "\"sd\"", "\"seeds\"", "\"split\""}) {
    EXPECT_NE(j.find(key), std::string::npos) << key;
  }
}

TEST(LayerSweep, SingleCellAggregateEqualsCell) {
  const std::vector<SweepCondition> c{{{"de", "en"}, "A"}};
  const std::vector<int> blocks{3};
  const auto r = layer_sweep(c, blocks, [](const SweepCondition&, int) { return 0.625; });
  EXPECT_EQ(r.aggregate.at(3), 0.625);
  EXPECT_EQ(r.best_block, 3);
  EXPECT_EQ(r.delta_to_best.at("de-en/A").at(3), 0.0);
}

double scripted_cell(const SweepCondition& c, int block) {
  const double base = c.system == "A" ? 0.6 : 0.5;
  return base + (block == 2 ? 0.2 : 0.0) + (block == 1 ? 0.05 : 0.0) + (c.lang_pair.src == "fi" ? 0.01 : 0.0);
}

TEST(LayerSweep, AggregatesAndSelectsArgmax) {
  const std::vector<SweepCondition> c{{{"de", "en"}, "A"}, {{"de", "en"}, "B"}, {{"fi", "en"}, "A"}};
  const std::vector<int> blocks{0, 1, 2, 3};
  const auto r = layer_sweep(c, blocks, scripted_cell);
  EXPECT_EQ(r.best_block, 2);
  EXPECT_NEAR(r.aggregate.at(2), (0.8 + 0.7 + 0.81) / 3, 1e-15);
  EXPECT_NEAR(r.delta_to_best.at("de-en/B").at(0), -0.2, 1e-12);
  EXPECT_TRUE(r.failures.empty());
}

TEST(LayerSweep, OrderInvariantAndEarliestTie) {
  std::vector<SweepCondition> c{{{"de", "en"}, "A"}, {{"de", "en"}, "B"}, {{"fi", "en"}, "A"}, {{"ru", "en"}, "C"}};
  const std::vector<int> blocks{0, 1, 2};
  const auto ref = layer_sweep(c, blocks, scripted_cell);
  std::sort(c.begin(), c.end());
  do {
    const auto r = layer_sweep(c, blocks, scripted_cell);
    EXPECT_EQ(r.aggregate, ref.aggregate);
    EXPECT_EQ(r.best_block, ref.best_block);
  } while (std::next_permutation(c.begin(), c.end()));
  const auto tie = layer_sweep(c, std::vector<int>{0, 1, 2}, [](const SweepCondition&, int b) { return b == 0 ? 0.5 : 0.7; });
  EXPECT_EQ(tie.best_block, 1);
}

TEST(LayerSweep, FailedCellSkipped) {
  const std::vector<SweepCondition> c{{{"de", "en"}, "A"}, {{"de", "en"}, "B"}};
  const std::vector<int> blocks{0, 1};
  const auto r = layer_sweep(c, blocks, [](const SweepCondition& cond, int b) {
    if (cond.system == "B" && b == 1) throw Error(ErrorKind::kTraining, "diverged");
    return b == 1 ? 0.9 : 0.6;
  });
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_NE(r.failures.front().find("de-en/B"), std::string::npos);
  EXPECT_EQ(r.aggregate.at(1), 0.9);
  EXPECT_EQ(r.aggregate.at(0), 0.6);
  EXPECT_FALSE(r.accuracy.at("de-en/B").contains(1));
}

TEST(LayerSweep, FindsSignalBlockOnToySurrogate) {
  const ToySurrogate toy(testing::signal_surrogate(2, 2.0, 3, 8));
  const auto train = testing::toy_corpus({.sources = 60, .seed = 21});
  const auto dev = testing::toy_corpus({.sources = 20, .seed = 22, .id_prefix = "d"});
  std::vector<int> blocks{0, 1, 2, 3};
  const std::vector<SweepCondition> c{{{"de", "en"}, "sysA"}};
  const auto r = layer_sweep(c, blocks, [&](const SweepCondition&, int block) {
    const auto tx = testing::features(toy, train, block);
    const auto dx = testing::features(toy, dev, block);
    if (block < 2) EXPECT_EQ(testing::nearest_centroid_accuracy(tx, dx), 0.5);
    else EXPECT_GE(testing::nearest_centroid_accuracy(tx, dx), 0.99);
    return train_detector(DetectorModel(testing::small_detector(8, block), 1), tx, dx, testing::fast_training(), 1)
        .history.best_dev_accuracy();
  });
  EXPECT_EQ(r.best_block, 2);
  EXPECT_EQ(r.aggregate.at(0), 0.5);
  EXPECT_EQ(r.aggregate.at(1), 0.5);
}

struct Grid {
  ToySurrogate narrow{testing::signal_surrogate(0, 2.0, 1, 8)};
  ToySurrogate wide{testing::signal_surrogate(0, 2.0, 1, 12)};
  std::vector<DetectorModel> models;
  std::vector<TrainCondition> trains;
  std::vector<EvalCondition> tests;
  Grid() {
    for (int i = 0; i < 3; ++i) models.emplace_back(testing::small_detector(8), 10 + i);
    const char* systems[] = {"A", "B", "C"};
    for (int i = 0; i < 3; ++i) {
      trains.push_back({std::string("train-") + systems[i], {"de-en"}, {"A", "B", "C"}, &models[static_cast<std::size_t>(i)]});
    }
    for (const auto* s : {"A", "B", "C", "M2M"}) tests.push_back({std::string("de-en/") + s, {"de", "en"}, s});
  }
  std::vector<DetectorExample> examples(const EvalCondition& e, const ToySurrogate& s) const {
    return testing::features(s, testing::toy_corpus({.sources = 6, .systems = {e.system}, .seed = 3}), 0);
  }
};

TEST(CrossEval, SingleCell) {
  Grid g;
  const std::vector<TrainCondition> one{{"train", {"de-en"}, {"A"}, &g.models[0]}};
  const std::vector<EvalCondition> test{g.tests[0]};
  const auto r = cross_eval(one, test, [&](const TrainCondition&, const EvalCondition& e) { return g.examples(e, g.narrow); });
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_FALSE(r.cells.front().zero_shot);
  EXPECT_EQ(r.cells.front().n, 12u);
}

TEST(CrossEval, GridCountsZeroShotAndDeterminism) {
  Grid g;
  auto fn = [&](const TrainCondition&, const EvalCondition& e) { return g.examples(e, g.narrow); };
  const auto r = cross_eval(g.trains, g.tests, fn);
  ASSERT_EQ(r.cells.size(), 12u);
  std::size_t zero_shot = 0;
  for (const auto& c : r.cells) {
    zero_shot += c.zero_shot;
    EXPECT_EQ(c.accuracy, static_cast<double>(c.correct_count) / static_cast<double>(c.n));
    EXPECT_EQ(c.zero_shot, c.eval_system == "M2M");
  }
  EXPECT_EQ(zero_shot, 3u);
  const auto again = cross_eval(g.trains, g.tests, fn);
  for (std::size_t i = 0; i < r.cells.size(); ++i) EXPECT_EQ(again.cells[i].accuracy, r.cells[i].accuracy);
  // Diagonal cell equals single-condition evaluation.
  const auto direct = evaluate_examples(g.models[0], g.examples(g.tests[0], g.narrow));
  EXPECT_EQ(r.cells.front().accuracy, direct.accuracy);
  EXPECT_EQ(r.cells.front().correct, direct.correct);
}

TEST(CrossEval, SingleSystemModelsMarkOffDiagonal) {
  Grid g;
  for (std::size_t i = 0; i < 3; ++i) g.trains[i].systems = {g.tests[i].system};
  g.trains[2].langs = {"fi-en"};
  const auto r = cross_eval(g.trains, g.tests, [&](const TrainCondition&, const EvalCondition& e) { return g.examples(e, g.narrow); });
  std::size_t zero_shot = 0;
  for (const auto& c : r.cells) zero_shot += c.zero_shot;
  EXPECT_EQ(zero_shot, 3u + 3u + 4u);
}

TEST(CrossEval, IncompatibleWidthIsSkippedAndLogged) {
  Grid g;
  const auto r = cross_eval(g.trains, g.tests, [&](const TrainCondition& t, const EvalCondition& e) {
    return g.examples(e, t.name == "train-B" ? g.wide : g.narrow);
  });
  EXPECT_EQ(r.cells.size() + r.skipped.size(), 12u);
  ASSERT_EQ(r.skipped.size(), 4u);
  EXPECT_NE(r.skipped.front().find("train-B@de-en/A"), std::string::npos) << r.skipped.front();
  EXPECT_NE(r.skipped.front().find("configuration"), std::string::npos) << r.skipped.front();
}

TEST(Reports, JsonAndTsvLayout) {
  TempDir dir;
  Grid g;
  auto r = cross_eval(g.trains, g.tests, [&](const TrainCondition&, const EvalCondition& e) { return g.examples(e, g.narrow); });
  EvalReport report;
  report.cells = r.cells;
  report.cells.front().p_value_vs_baseline = 0.25;
  report.significance.push_back(approx_randomization(r.cells[0].correct, r.cells[1].correct, 100, 1));
  report.metadata["note"] = "x";
  write_report_json(dir / "r.json", report);
  write_report_tsv(dir / "r.tsv", report);
  const auto json = io::read_text(dir / "r.json");
  for (const auto* key : {"\"cells\"", "\"significance\"", "\"metadata\"", "two-sided"}) {
    EXPECT_NE(json.find(key), std::string::npos) << key;
  }
  std::istringstream tsv(io::read_text(dir / "r.tsv"));
  std::string header;
  std::getline(tsv, header);
  EXPECT_EQ(header, "train_langs\ttrain_systems\teval_lang\teval_system\tn\taccuracy\tzero_shot\tp_value_vs_baseline");
  std::size_t rows = 0;
  for (std::string line; std::getline(tsv, line);) ++rows;
  EXPECT_EQ(rows, 12u);
}

}  // namespace
}  // namespace smatd
