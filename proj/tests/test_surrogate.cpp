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

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "smatd/error.hpp"
#include "smatd/rng.hpp"
#include "smatd/surrogate.hpp"
#include "smatd/tensor_io.hpp"
#include "support.hpp"

namespace smatd {
namespace {

using testing::make_pair;
using testing::TempDir;

ToySurrogate default_toy() { return ToySurrogate(ToySurrogateConfig{}); }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an smatd::Error";
  return ErrorKind::kIo;
}

TEST(Rng, StreamsAreKeyedAndReproducible) {
  auto a = rng::stream(1, "x", 3), b = rng::stream(1, "x", 3);
  EXPECT_EQ(a(), b());
  EXPECT_NE(rng::stream(1, "x", 3)(), rng::stream(1, "x", 4)());
  EXPECT_NE(rng::stream(1, "x", 3)(), rng::stream(1, "y", 3)());
  EXPECT_NE(rng::stream(1, "x", 3)(), rng::stream(2, "x", 3)());
}

TEST(Rng, Fnv1aKnownVectors) {
  EXPECT_EQ(rng::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(rng::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(rng::fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(TensorIo, Float64RoundTripIsExact) {
  TempDir dir;
  Eigen::MatrixXd m(2, 3);
  m << 1.0 / 3.0, -2.5, 1e-300, 4, 5, std::nextafter(1.0, 2.0);
  std::vector<io::NamedTensor> ts{{"m", m}, {"v", Eigen::MatrixXd::Constant(1, 4, 7.0)}};
  io::write_container(dir / "t.smtd", R"({"note":"x"})", ts, io::DType::kFloat64);
  const auto c = io::read_container(dir / "t.smtd");
  ASSERT_NE(c.find("m"), nullptr);
  EXPECT_EQ(c.find("m")->value, m);
  EXPECT_EQ(c.find("v")->value.cols(), 4);
  EXPECT_EQ(c.find("missing"), nullptr);
  EXPECT_NE(c.header_json.find("\"note\""), std::string::npos);
}

TEST(TensorIo, Float32RoundsToSinglePrecision) {
  TempDir dir;
  Eigen::MatrixXd m(1, 2);
  m << 1.0 / 3.0, 0.1;
  std::vector<io::NamedTensor> ts{{"m", m}};
  io::write_container(dir / "t.smtd", "{}", ts, io::DType::kFloat32);
  const auto got = io::read_container(dir / "t.smtd").find("m")->value;
  EXPECT_EQ(got(0, 0), static_cast<double>(static_cast<float>(1.0 / 3.0)));
  EXPECT_EQ(got(0, 1), static_cast<double>(0.1f));
}

TEST(TensorIo, LayoutIsMagicVersionHeaderPayload) {
  TempDir dir;
  Eigen::MatrixXd m(1, 1);
  m << 2.0;
  std::vector<io::NamedTensor> ts{{"m", m}};
  io::write_container(dir / "t.smtd", "{}", ts, io::DType::kFloat32);
  const auto bytes = io::read_text(dir / "t.smtd");
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(bytes.substr(0, 4), "SMTD");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&header_len, bytes.data() + 8, 8);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(bytes.size(), 16 + header_len + 4);
  float value = 0;
  std::memcpy(&value, bytes.data() + 16 + header_len, 4);
  EXPECT_EQ(value, 2.0f);
}

TEST(TensorIo, RejectsForeignFiles) {
  TempDir dir;
  io::write_text_atomic(dir / "bad.smtd", "NOPE and more bytes here");
  EXPECT_EQ(kind_of([&] { io::read_container(dir / "bad.smtd"); }), ErrorKind::kIo);
  EXPECT_EQ(kind_of([&] { io::read_container(dir / "absent.smtd"); }), ErrorKind::kIo);
}

TEST(ToySurrogate, ShapeIsTagPlusWords) {
  const auto toy = default_toy();
  const auto pair = make_pair("a", Label::kHT, "", "quelle satz", "one two");
  const auto seq = toy.extract_states(pair.view(), 1);
  EXPECT_EQ(seq.states.rows(), 3);
  EXPECT_EQ(seq.states.cols(), toy.hidden_dim());
  EXPECT_EQ(seq.token_ids.size(), 3u);
  EXPECT_EQ(seq.block, 1);
  EXPECT_TRUE(seq.states.allFinite());
}

TEST(ToySurrogate, ExtractionIsBitIdentical) {
  const auto toy = default_toy();
  const auto pair = make_pair("a", Label::kHT, "", "quelle satz hier", "one two three");
  for (int block = 0; block <= toy.num_blocks(); ++block) {
    const auto a = toy.extract_states(pair.view(), block);
    const auto b = toy.extract_states(pair.view(), block);
    EXPECT_EQ(a.states, b.states);
    EXPECT_EQ(a.token_ids, b.token_ids);
  }
}

TEST(ToySurrogate, EmbeddingBlockIgnoresSource) {
  const auto toy = default_toy();
  const auto p1 = make_pair("a", Label::kHT, "", "erste quelle", "same target words");
  const auto p2 = make_pair("a", Label::kHT, "", "ganz andere lange quelle", "same target words");
  EXPECT_EQ(toy.extract_states(p1.view(), 0).states, toy.extract_states(p2.view(), 0).states);
  for (int block = 1; block <= toy.num_blocks(); ++block) {
    EXPECT_GT((toy.extract_states(p1.view(), block).states - toy.extract_states(p2.view(), block).states)
                  .norm(),
              1e-6)
        << block;
  }
}

TEST(ToySurrogate, BlockZeroSourceIndependenceProperty) {
  const auto toy = default_toy();
  for (int i = 0; i < 20; ++i) {
    const auto target = "t" + std::to_string(i) + " x" + std::to_string(3 * i);
    const auto a = make_pair("a", Label::kHT, "", "s" + std::to_string(i), target);
    const auto b = make_pair("a", Label::kHT, "", "other s" + std::to_string(7 * i), target);
    EXPECT_EQ(toy.extract_states(a.view(), 0).states, toy.extract_states(b.view(), 0).states);
  }
}

TEST(ToySurrogate, MarkedTwinDiffersOnlyFromSignalBlock) {
  const ToySurrogate toy(testing::signal_surrogate(2, 1.0, 3));
  const auto ht = make_pair("a", Label::kHT, "", "src words", "alpha beta gamma");
  const auto mt = make_pair("a", Label::kMT, "m", "src words", "alpha beta~ gamma");
  for (int block = 0; block < 2; ++block) {
    EXPECT_EQ(toy.extract_states(ht.view(), block).states, toy.extract_states(mt.view(), block).states);
  }
  const Eigen::MatrixXd diff = toy.extract_states(mt.view(), 2).states - toy.extract_states(ht.view(), 2).states;
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    EXPECT_NEAR((diff.row(r) - toy.signal_direction()).norm(), 0.0, 1e-12);
  }
  EXPECT_GT((toy.extract_states(mt.view(), 3).states - toy.extract_states(ht.view(), 3).states).norm(), 1e-6);
}

TEST(ToySurrogate, ErrorContracts) {
  const auto toy = default_toy();
  const auto ok = make_pair("a", Label::kHT);
  EXPECT_EQ(kind_of([&] { toy.extract_states(ok.view(), 3); }), ErrorKind::kRange);
  EXPECT_EQ(kind_of([&] { toy.extract_states(ok.view(), -1); }), ErrorKind::kRange);
  const auto xx = make_pair("a", Label::kHT, "", "s", "t", "xx", "en");
  EXPECT_EQ(kind_of([&] { toy.extract_states(xx.view(), 0); }), ErrorKind::kCapability);
  EXPECT_EQ(kind_of([&] { toy.target_log_probs(xx.view()); }), ErrorKind::kCapability);
  PairView blank{"a", "de", "en", "quelle", "   "};
  EXPECT_EQ(kind_of([&] { toy.extract_states(blank, 0); }), ErrorKind::kInput);
}

TEST(ToySurrogate, ParametersStayFrozen) {
  const auto toy = default_toy();
  const auto before = toy.parameter_digest();
  const auto pair = make_pair("a", Label::kHT, "", "quelle", "one two");
  for (int b = 0; b <= toy.num_blocks(); ++b) toy.extract_states(pair.view(), b);
  toy.target_log_probs(pair.view());
  per_word_perplexity(toy, pair);
  EXPECT_EQ(toy.parameter_digest(), before);
  EXPECT_NE(ToySurrogate(ToySurrogateConfig{.seed = 8}).parameter_digest(), before);
}

TEST(ToySurrogate, ListBlocks) {
  const ToySurrogate toy(ToySurrogateConfig{.layers = 2});
  EXPECT_EQ(list_blocks(&toy), 2);
  EXPECT_EQ(kind_of([] { list_blocks(nullptr); }), ErrorKind::kUsage);
}

TEST(ToySurrogate, ModelIdRoundTripsThroughLoader) {
  ToySurrogateConfig c{.hidden_dim = 12, .layers = 3, .buckets = 64, .seed = 5, .languages = {"fi", "en"},
                       .signal_block = 2, .signal_scale = 0.75};
  const auto id = c.model_id();
  const auto parsed = ToySurrogateConfig::parse(id);
  EXPECT_EQ(parsed.model_id(), id);
  const auto adapter = load_surrogate(id);
  EXPECT_EQ(adapter->model_id(), id);
  EXPECT_EQ(adapter->num_blocks(), 3);
  EXPECT_EQ(adapter->hidden_dim(), 12);
  EXPECT_TRUE(adapter->supports_language("fi"));
  EXPECT_FALSE(adapter->supports_language("de"));
  EXPECT_EQ(kind_of([] { load_surrogate("facebook/nllb-200-3.3B"); }), ErrorKind::kCapability);
  EXPECT_THROW(ToySurrogateConfig::parse("toy:hidden_dim=4,bogus=1"), Error);
}

TEST(Perplexity, FromLogProbsAlgebra) {
  const std::vector<double> half_quarter{std::log(0.5), std::log(0.25)};
  const auto v = perplexity_from_log_probs(half_quarter);
  EXPECT_NEAR(v.ppl / (2.0 * std::sqrt(2.0)), 1.0, 1e-12);
  EXPECT_FALSE(v.zero_probability);
  const std::vector<double> zero{std::log(0.5), -std::numeric_limits<double>::infinity()};
  const auto z = perplexity_from_log_probs(zero);
  EXPECT_TRUE(std::isinf(z.ppl));
  EXPECT_TRUE(z.zero_probability);
}

TEST(Perplexity, MonotoneInEachTokenProbability) {
  std::vector<double> lp{std::log(0.3), std::log(0.6), std::log(0.9)};
  const double base = perplexity_from_log_probs(lp).ppl;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    for (double c : {0.99, 0.5, 0.1}) {
      auto scaled = lp;
      scaled[i] += std::log(c);
      EXPECT_GT(perplexity_from_log_probs(scaled).ppl, base);
    }
  }
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  const ToySurrogate toy(ToySurrogateConfig{.output_scale = 0.0});
  for (const auto* target : {"one", "one two three", "a b c d e f g"}) {
    const auto rec = per_word_perplexity(toy, make_pair("a", Label::kHT, "", "quelle", target));
    EXPECT_NEAR(rec.ppl / toy.vocab_size(), 1.0, 1e-6) << target;
  }
}

TEST(Perplexity, ScoresWordsAndEndButNotTag) {
  const auto toy = default_toy();
  const auto rec = per_word_perplexity(toy, make_pair("a", Label::kHT, "", "quelle", "one two three"));
  EXPECT_EQ(rec.n_tokens, 4u);
  EXPECT_EQ(toy.extract_states(make_pair("a", Label::kHT, "", "quelle", "one two three").view(), 0)
                .length(),
            4);
}

TEST(Perplexity, AtLeastOneAndIndependentOfLabel) {
  const auto toy = default_toy();
  for (int i = 0; i < 10; ++i) {
    const auto target = "w" + std::to_string(i) + " v" + std::to_string(i * i);
    const auto ht = per_word_perplexity(toy, make_pair("a", Label::kHT, "", "q", target));
    const auto mt = per_word_perplexity(toy, make_pair("a", Label::kMT, "sys", "q", target));
    EXPECT_GE(ht.ppl, 1.0);
    EXPECT_EQ(ht.ppl, mt.ppl);
    EXPECT_EQ(mt.label, Label::kMT);
  }
}

TEST(ExtractionCache, StoresFloat32RecordsPerKey) {
  TempDir dir;
  const auto toy = default_toy();
  const ExtractionCache cache(dir.path());
  const auto pair = make_pair("id/with:odd chars", Label::kHT, "", "quelle", "one two");
  auto seq = toy.extract_states(pair.view(), 1);
  seq.pair_id = pair.key();
  EXPECT_FALSE(cache.contains(seq.pair_id, toy.model_id(), 1));
  cache.store(seq, toy.model_id());
  EXPECT_TRUE(cache.contains(seq.pair_id, toy.model_id(), 1));
  EXPECT_FALSE(cache.contains(seq.pair_id, toy.model_id(), 0));
  const auto back = cache.load(seq.pair_id, toy.model_id(), 1);
  EXPECT_EQ(back.token_ids, seq.token_ids);
  EXPECT_EQ(back.block, 1);
  ASSERT_EQ(back.states.rows(), seq.states.rows());
  EXPECT_EQ(back.states, seq.states.cast<float>().cast<double>());
  EXPECT_TRUE(std::filesystem::exists(cache.record_path(seq.pair_id, toy.model_id(), 1)));
  EXPECT_EQ(kind_of([&] { cache.load("other", toy.model_id(), 1); }), ErrorKind::kIo);
}

TEST(ExtractionCache, RootFromEnvironment) {
  TempDir dir;
  ::setenv(ExtractionCache::kEnvVar, dir.path().c_str(), 1);
  EXPECT_EQ(ExtractionCache::from_environment("/nonexistent").root(), dir.path());
  ::unsetenv(ExtractionCache::kEnvVar);
  EXPECT_EQ(ExtractionCache::from_environment("/fallback").root(), "/fallback");
}

}  // namespace
}  // namespace smatd
