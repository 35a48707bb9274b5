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

#include "fedsyn/eval.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedsyn/random.h"

namespace fedsyn {
namespace {

std::vector<EmbeddingVector> GaussianPoints(size_t n, size_t dim, double shift,
                                            Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<EmbeddingVector> out(n);
  for (auto& e : out) {
    e.values.resize(dim);
    for (auto& x : e.values) x = g(rng) + shift;
  }
  return out;
}

// Direct transcription of the unbiased estimator.
double MmdOracle(const std::vector<EmbeddingVector>& a,
                 const std::vector<EmbeddingVector>& b, double h) {
  auto k = [h](const EmbeddingVector& x, const EmbeddingVector& y) {
    double d = 0.0;
    for (size_t i = 0; i < x.values.size(); ++i) {
      d += (x.values[i] - y.values[i]) * (x.values[i] - y.values[i]);
    }
    return std::exp(-d / (2 * h * h));
  };
  const double m = a.size(), n = b.size();
  double xx = 0, yy = 0, xy = 0;
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a.size(); ++j)
      if (i != j) xx += k(a[i], a[j]);
  for (size_t i = 0; i < b.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j)
      if (i != j) yy += k(b[i], b[j]);
  for (const auto& x : a)
    for (const auto& y : b) xy += k(x, y);
  return std::max(0.0, xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2 * xy / (m * n));
}

TEST(MmdTest, MatchesEstimatorAndIsSymmetric) {
  Rng rng(1);
  const auto a = GaussianPoints(30, 4, 0.0, rng);
  const auto b = GaussianPoints(40, 4, 0.7, rng);
  EXPECT_NEAR(Mmd(a, b, 1.3), MmdOracle(a, b, 1.3), 1e-12);
  EXPECT_GT(Mmd(a, b, 1.3), 0.0);
  EXPECT_EQ(Mmd(a, b, 1.3), Mmd(b, a, 1.3));
}

TEST(MmdTest, IdenticalListsGiveZero) {
  Rng rng(2);
  const auto a = GaussianPoints(50, 3, 0.0, rng);
  EXPECT_NEAR(Mmd(a, a, 1.0), 0.0, 1e-9);
}

TEST(MmdTest, SeparatedPointMassesApproachTwo) {
  EmbeddingVector x{{0.0, 0.0}}, y{{100.0, 0.0}};
  const std::vector<EmbeddingVector> a(10, x), b(10, y);
  const double sep = Mmd(a, b, 1.0);
  EXPECT_NEAR(sep, 2.0, 1e-9);
  Rng rng(3);
  const auto p = GaussianPoints(10, 2, 0.0, rng), q = GaussianPoints(10, 2, 0.0, rng);
  EXPECT_GT(sep, Mmd(p, q, 1.0));
}

TEST(MmdTest, SameDistributionPassesPermutationTest) {
  int below = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto a = GaussianPoints(60, 3, 0.0, rng);
    const auto b = GaussianPoints(60, 3, 0.0, rng);
    const double h = 1.5;
    const double stat = Mmd(a, b, h);
    std::vector<EmbeddingVector> pool(a);
    pool.insert(pool.end(), b.begin(), b.end());
    std::vector<double> null;
    for (int p = 0; p < 200; ++p) {
      std::shuffle(pool.begin(), pool.end(), rng);
      null.push_back(Mmd({pool.begin(), pool.begin() + 60},
                         {pool.begin() + 60, pool.end()}, h));
    }
    std::sort(null.begin(), null.end());
    below += stat < null[static_cast<size_t>(0.95 * null.size())];
  }
  EXPECT_GE(below, 18);
}

TEST(MmdTest, ShiftedDistributionIsDetected) {
  Rng rng(4);
  const auto a = GaussianPoints(60, 3, 0.0, rng);
  const auto b = GaussianPoints(60, 3, 0.0, rng);
  const auto c = GaussianPoints(60, 3, 1.0, rng);
  EXPECT_GT(Mmd(a, c, 1.5), 10 * Mmd(a, b, 1.5));
}

TEST(MedianPairwiseDistanceTest, SmallExample) {
  // Distances: 1, 2, 3 → median 2.
  const std::vector<EmbeddingVector> p = {{{0.0}}, {{1.0}}, {{3.0}}};
  EXPECT_DOUBLE_EQ(MedianPairwiseDistance(p), 2.0);
  Rng rng(5);
  const auto big = GaussianPoints(3000, 2, 0.0, rng);
  const double m = MedianPairwiseDistance(big);
  // Median distance between two standard 2-D normals: 2 * sqrt(ln 2).
  EXPECT_NEAR(m, 2.0 * std::sqrt(std::log(2.0)), 0.05);
}

std::vector<Document> WithCodes(const std::vector<size_t>& codes) {
  std::vector<Document> out;
  for (size_t c : codes) out.push_back({{tokenizer::kBos, tokenizer::kEos}, c});
  return out;
}

TEST(CodeHistogramTvTest, Examples) {
  EXPECT_DOUBLE_EQ(CodeHistogramTv(WithCodes({0, 1, 1}), WithCodes({1, 0, 1}), 2), 0.0);
  EXPECT_DOUBLE_EQ(CodeHistogramTv(WithCodes({0, 0}), WithCodes({1, 2}), 3), 1.0);
  EXPECT_NEAR(CodeHistogramTv(WithCodes({0, 1}),
                              WithCodes({0, 0, 0, 0, 0, 0, 0, 1, 1, 1}), 2),
              0.2, 1e-12);
  const auto h = CodeHistogram(WithCodes({2, 2, 0}), 3);
  EXPECT_DOUBLE_EQ(h[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(h[1], 0.0);
  EXPECT_DOUBLE_EQ(h[2], 2.0 / 3.0);
}

TEST(CodeHistogramTvTest, TriangleInequality) {
  Rng rng(6);
  auto random_set = [&rng]() {
    std::vector<size_t> codes(1 + rng() % 30);
    for (auto& c : codes) c = rng() % 4;
    return WithCodes(codes);
  };
  for (int t = 0; t < 200; ++t) {
    const auto a = random_set(), b = random_set(), c = random_set();
    const double ab = CodeHistogramTv(a, b, 4), bc = CodeHistogramTv(b, c, 4),
                 ac = CodeHistogramTv(a, c, 4);
    EXPECT_LE(ac, ab + bc + 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(ClassifierTest, SeparableToyIsLearnedExactly) {
  std::vector<Document> docs;
  for (int i = 0; i < 20; ++i) {
    docs.push_back({tokenizer::Encode(std::string(1 + i % 5, 'a')), 0});
    docs.push_back({tokenizer::Encode(std::string(1 + i % 5, 'b')), 1});
  }
  const Classifier clf = TrainClassifier(docs, 2, tokenizer::kVocabSize, {});
  const auto s = Evaluate(clf, docs);
  EXPECT_DOUBLE_EQ(s.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(s.macro_f1, 1.0);
}

TEST(ClassifierTest, SingleClassIsRejected) {
  const auto docs = WithCodes({1, 1, 1});
  EXPECT_THROW(TrainClassifier(docs, 3, tokenizer::kVocabSize, {}),
               std::invalid_argument);
}

TEST(ClassifierTest, DeterministicAndPureEvaluation) {
  const CorpusSpec spec = BuildSpec(SpecRecipe{});
  const auto train = SynthesizeGroundTruth(spec, 300, 1);
  const auto test = SynthesizeGroundTruth(spec, 200, 2);
  ClassifierOptions opt;
  opt.seed = 9;
  const Classifier a = TrainClassifier(train, 5, tokenizer::kVocabSize, opt);
  const Classifier b = TrainClassifier(train, 5, tokenizer::kVocabSize, opt);
  EXPECT_EQ(a.weights, b.weights);
  const auto s1 = Evaluate(a, test), s2 = Evaluate(a, test);
  EXPECT_EQ(s1.accuracy, s2.accuracy);
  EXPECT_EQ(s1.macro_f1, s2.macro_f1);
  EXPECT_GT(s1.accuracy, 0.3);  // above the 0.2 chance level
}

TEST(ScorePredictionsTest, MacroF1Oracle) {
  // Class 0: tp 2, fp 1, fn 0 → F1 0.8. Class 1: tp 1, fp 0, fn 1 → 2/3.
  // Class 2 absent from truth and excluded.
  const auto s = ScorePredictions({0, 0, 1, 1}, {0, 0, 1, 0});
  EXPECT_DOUBLE_EQ(s.accuracy, 0.75);
  EXPECT_NEAR(s.macro_f1, (0.8 + 2.0 / 3.0) / 2, 1e-12);
  const auto t = ScorePredictions({0, 1}, {2, 2});
  EXPECT_DOUBLE_EQ(t.macro_f1, 0.0);
}

TEST(ScorePredictionsTest, MajorityPredictorAccuracyExceedsF1) {
  std::vector<size_t> truth(100, 0);
  std::fill(truth.begin() + 80, truth.end(), 1);
  const std::vector<size_t> majority(100, 0);
  const auto s = ScorePredictions(truth, majority);
  EXPECT_DOUBLE_EQ(s.accuracy, 0.8);
  EXPECT_NEAR(s.macro_f1, (2 * 0.8 / 1.8) / 2, 1e-12);
  EXPECT_GT(s.accuracy, s.macro_f1);
}

TEST(ScorePredictionsTest, RandomPredictorOnBalancedData) {
  double total = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<size_t> truth(1000), pred(1000);
    for (size_t i = 0; i < 1000; ++i) {
      truth[i] = i % 2;
      pred[i] = rng() % 2;
    }
    total += ScorePredictions(truth, pred).macro_f1;
  }
  EXPECT_NEAR(total / 20, 0.5, 0.05);
}

TEST(MetricsReportTest, JsonFields) {
  MetricsReport r;
  r.label = "refined";
  r.size = 12;
  r.mmd = 0.01;
  r.config_fingerprint = "abc";
  const auto j = r.ToJson();
  for (const char* key : {"label", "size", "mmd", "bandwidth", "code_tv",
                          "downstream_accuracy", "downstream_macro_f1", "seed",
                          "config_fingerprint"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

}  // namespace
}  // namespace fedsyn
