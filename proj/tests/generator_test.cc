// Copyright 2026 The fedsyn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsyn/generator.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fedsyn/random.h"

namespace fedsyn {
namespace {

namespace fs = std::filesystem;
using tokenizer::kBos;
using tokenizer::kEos;

ModelParams RandomParams(size_t codes, size_t v, Rng& rng, double scale = 1.0) {
  ModelParams p(codes, v);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : p.flat()) x = n(rng);
  return p;
}

Document RandomDoc(size_t codes, size_t v, size_t len, Rng& rng) {
  std::uniform_int_distribution<Token> tok(0, static_cast<Token>(v - 1));
  Document d;
  d.code = rng() % codes;
  d.tokens.push_back(kBos);
  for (size_t i = 0; i < len; ++i) d.tokens.push_back(tok(rng));
  return d;
}

// Softmax-chain evaluation written from scratch.
double LogProbOracle(const ModelParams& p, const Document& d) {
  const size_t v = p.vocab_size();
  double lp = 0.0;
  for (size_t l = 1; l < d.tokens.size(); ++l) {
    double z = 0.0;
    for (size_t k = 0; k < v; ++k) z += std::exp(p.at(d.code, d.tokens[l - 1], k));
    lp += std::log(std::exp(p.at(d.code, d.tokens[l - 1], d.tokens[l])) / z);
  }
  return lp;
}

TEST(LogProbTest, UniformParams) {
  const ModelParams p(2, tokenizer::kVocabSize);
  const Document d{tokenizer::Encode("hello"), 1};
  const double transitions = static_cast<double>(d.tokens.size() - 1);
  EXPECT_NEAR(LogProb(p, d),
              -transitions * std::log(static_cast<double>(tokenizer::kVocabSize)),
              1e-9);
}

TEST(LogProbTest, ContinuationsNormalize) {
  Rng rng(1);
  const ModelParams p = RandomParams(2, 7, rng);
  const Document prefix{{kBos, 4, 5}, 1};
  double total = 0.0;
  for (Token t = 0; t < 7; ++t) {
    Document d = prefix;
    d.tokens.push_back(t);
    total += std::exp(LogProb(p, d) - LogProb(p, prefix));
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(LogProbTest, MatchesDirectSoftmaxChain) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelParams p = RandomParams(3, 9, rng, 2.0);
    const Document d = RandomDoc(3, 9, 1 + rng() % 12, rng);
    EXPECT_NEAR(LogProb(p, d), LogProbOracle(p, d), 1e-9);
    EXPECT_LE(LogProb(p, d), 0.0);
  }
}

TEST(LogProbTest, RowsNormalize) {
  Rng rng(3);
  const ModelParams p = RandomParams(2, 11, rng, 3.0);
  for (size_t c = 0; c < 2; ++c) {
    for (Token prev = 0; prev < 11; ++prev) {
      double sum = 0.0;
      for (Token next = 0; next < 11; ++next) {
        sum += std::exp(LogProb(p, {{prev, next}, c}));
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(LogProbTest, RejectsInvalidDocuments) {
  const ModelParams p(2, 5);
  EXPECT_THROW(LogProb(p, {{0, 7}, 0}), CorpusError);
  EXPECT_THROW(LogProb(p, {{0, 1}, 2}), CorpusError);
  EXPECT_THROW(LogProb(p, {{}, 0}), CorpusError);
}

TEST(GradientTest, ClosedFormTwoTokenVocabulary) {
  const ModelParams p(1, 2);
  const auto g = GradNegLogProb(p, {{0, 1}, 0});
  // Row (code 0, prev 0): softmax - onehot(1).
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], -0.5);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
  EXPECT_DOUBLE_EQ(g[3], 0.0);
}

TEST(GradientTest, MatchesCentralFiniteDifferences) {
  Rng rng(4);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const ModelParams p = RandomParams(2, 5, rng);
    const Document d = RandomDoc(2, 5, 1 + rng() % 8, rng);
    const auto g = GradNegLogProb(p, d);
    // Check every coordinate in the visited rows plus a few random others.
    for (size_t k = 0; k < p.size(); ++k) {
      const double h = 1e-5;
      ModelParams plus = p, minus = p;
      plus.flat()[k] += h;
      minus.flat()[k] -= h;
      const double fd = (-LogProb(plus, d) + LogProb(minus, d)) / (2.0 * h);
      const double scale = std::max(1.0, std::abs(fd));
      ASSERT_NEAR(g[k], fd, 1e-5 * scale) << "coordinate " << k;
    }
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(GradientTest, UnvisitedRowsZeroAndVisitedRowsSumToZero) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const ModelParams p = RandomParams(3, 8, rng);
    const Document d = RandomDoc(3, 8, 1 + rng() % 6, rng);
    const auto g = GradNegLogProb(p, d);
    std::vector<bool> visited(3 * 8, false);
    for (size_t l = 0; l + 1 < d.tokens.size(); ++l) {
      visited[d.code * 8 + d.tokens[l]] = true;
    }
    for (size_t row = 0; row < 3 * 8; ++row) {
      double sum = 0.0;
      for (size_t k = 0; k < 8; ++k) {
        const double x = g[row * 8 + k];
        if (!visited[row]) EXPECT_EQ(x, 0.0);
        sum += x;
      }
      EXPECT_NEAR(sum, 0.0, 1e-12);
    }
  }
}

TEST(GradientTest, SparseMatchesDense) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const ModelParams p = RandomParams(2, 6, rng);
    const Document d = RandomDoc(2, 6, 1 + rng() % 10, rng);
    const SparseGradient s = SparseGradNegLogProb(p, d);
    const auto dense = GradNegLogProb(p, d);
    EXPECT_EQ(s.ToDense(), dense);
    double sq = 0.0;
    for (double x : dense) sq += x * x;
    EXPECT_NEAR(s.SquaredNorm(), sq, 1e-12);
    EXPECT_TRUE(std::is_sorted(s.row_offsets.begin(), s.row_offsets.end()));
  }
}

TEST(SampleTest, DegenerateChainAlwaysEmitsA) {
  ModelParams p(1, tokenizer::kVocabSize);
  const Token a = tokenizer::CharToken('a');
  for (Token t = 0; t < tokenizer::kVocabSize; ++t) {
    p.at(0, kBos, t) = t == a ? 0.0 : -1e9;
    p.at(0, a, t) = t == kEos ? 0.0 : -1e9;
  }
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const GenSample s = Sample(p, 0, {}, rng);
    EXPECT_EQ(tokenizer::Decode(s.tokens), "a");
    EXPECT_NEAR(s.log_prob, 0.0, 1e-9);
  }
}

TEST(SampleTest, GreedyIsDeterministicWithLowTieBreak) {
  Rng rng(8);
  ModelParams p = RandomParams(2, 10, rng);
  SamplingOptions greedy;
  greedy.greedy = true;
  greedy.max_length = 12;
  Rng r1(1), r2(999);
  EXPECT_EQ(Sample(p, 1, greedy, r1).tokens, Sample(p, 1, greedy, r2).tokens);
  ModelParams flat(1, 4);
  const GenSample s = Sample(flat, 0, {4, 1.0, true}, r1);
  EXPECT_EQ(s.tokens, (std::vector<Token>{0, 0, 0, 0}));
}

TEST(SampleTest, FirstTokenFrequenciesMatchTable) {
  Rng init(9);
  const ModelParams p = RandomParams(1, 6, init);
  std::vector<double> probs(6);
  double z = 0.0;
  for (Token t = 0; t < 6; ++t) z += std::exp(p.at(0, kBos, t));
  for (Token t = 0; t < 6; ++t) probs[t] = std::exp(p.at(0, kBos, t)) / z;
  Rng rng(10);
  std::vector<double> freq(6, 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) freq[Sample(p, 0, {3, 1.0, false}, rng).tokens[1]] += 1.0;
  for (Token t = 0; t < 6; ++t) EXPECT_NEAR(freq[t] / n, probs[t], 0.02);
}

TEST(SampleTest, LogProbMatchesScoringAndLengthCapped) {
  Rng rng(11);
  const ModelParams p = RandomParams(3, tokenizer::kVocabSize, rng);
  for (int i = 0; i < 100; ++i) {
    const GenSample s = Sample(p, i % 3, {16, 1.3, false}, rng);
    EXPECT_EQ(s.tokens.front(), kBos);
    EXPECT_TRUE(s.tokens.back() == kEos || s.tokens.size() == 16);
    EXPECT_LE(s.tokens.size(), 16u);
    EXPECT_NEAR(s.log_prob, LogProb(p, s.AsDocument()), 1e-9);
  }
  EXPECT_THROW(Sample(p, 0, {16, 0.0, false}, rng), CorpusError);
}

TEST(GenerateTest, AllocationBookkeeping) {
  Rng rng(12);
  const ModelParams p = RandomParams(2, 20, rng);
  const SyntheticDataset empty = GenerateSynthetic(p, {0, 0}, {}, rng);
  EXPECT_EQ(empty.size(), 0u);
  const SyntheticDataset ds = GenerateSynthetic(p, {3, 2}, {8, 1.0, false}, rng);
  ASSERT_EQ(ds.size(), 5u);
  EXPECT_EQ(ds.index_sets[0], (std::vector<size_t>{0, 1, 2}));
  EXPECT_EQ(ds.index_sets[1], (std::vector<size_t>{3, 4}));
  for (size_t i : ds.index_sets[1]) EXPECT_EQ(ds.samples[i].code, 1u);
  SyntheticDataset copy = ds;
  copy.index_sets.clear();
  copy.ReindexCodes();
  EXPECT_EQ(copy.index_sets, ds.index_sets);
}

TEST(GenerateTest, DeterministicGivenRng) {
  Rng init(13);
  const ModelParams p = RandomParams(2, 30, init);
  Rng a(1), b(1);
  EXPECT_EQ(GenerateSynthetic(p, {4, 4}, {}, a).samples,
            GenerateSynthetic(p, {4, 4}, {}, b).samples);
}

TEST(FitTest, SmoothedBigramRecoversCounts) {
  const std::vector<Document> docs = {{{0, 3, 1}, 0}, {{0, 3, 3, 1}, 0}};
  const ModelParams p = FitSmoothedBigram(docs, 1, 4, 0.5);
  // Row BOS: counts {3: 2}, total 2.
  EXPECT_NEAR(p.at(0, 0, 3), std::log(2.5 / 4.0), 1e-12);
  EXPECT_NEAR(p.at(0, 0, 1), std::log(0.5 / 4.0), 1e-12);
  EXPECT_THROW(FitSmoothedBigram(docs, 1, 4, 0.0), CorpusError);
}

TEST(TrainingSanityTest, FullBatchGradientDescentDecreasesNll) {
  SpecRecipe recipe;
  recipe.num_codes = 2;
  const auto docs = SynthesizeGroundTruth(BuildSpec(recipe), 200, 3);
  ModelParams p(2, tokenizer::kVocabSize);
  double prev = MeanNll(p, docs);
  for (int step = 0; step < 50; ++step) {
    std::vector<double> g(p.size(), 0.0);
    for (const auto& d : docs) SparseGradNegLogProb(p, d).AddTo(g, 1.0 / docs.size());
    for (size_t k = 0; k < p.size(); ++k) p.flat()[k] -= 0.2 * g[k];
    const double nll = MeanNll(p, docs);
    EXPECT_LT(nll, prev) << "step " << step;
    prev = nll;
  }
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  Rng rng(14);
  const ModelParams p = RandomParams(3, 17, rng, 5.0);
  const fs::path path = fs::temp_directory_path() / "fedsyn_ckpt_test.ckpt";
  SaveCheckpoint(path, p);
  EXPECT_EQ(LoadCheckpoint(path), p);
  EXPECT_EQ(fs::file_size(path), 8u + 12u + p.size() * 8u);
}

TEST(CheckpointTest, RejectsCorruptFiles) {
  const fs::path path = fs::temp_directory_path() / "fedsyn_bad.ckpt";
  std::ofstream(path) << "NOTACKPT";
  EXPECT_THROW(LoadCheckpoint(path), CorpusError);
  Rng rng(15);
  SaveCheckpoint(path, RandomParams(1, 4, rng));
  fs::resize_file(path, fs::file_size(path) - 3);
  EXPECT_THROW(LoadCheckpoint(path), CorpusError);
  EXPECT_THROW(LoadCheckpoint(path.string() + ".missing"), CorpusError);
}

}  // namespace
}  // namespace fedsyn
