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

#ifndef FEDSYN_EVAL_H_
#define FEDSYN_EVAL_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/generator.h"
#include "fedsyn/refine.h"
#include "json.hpp"

namespace fedsyn {

double GaussianKernel(std::span<const double> x, std::span<const double> y,
                      double bandwidth);

// Unbiased squared MMD with a Gaussian kernel, clamped at 0. A list with a
// single element uses k(x, x) = 1 for its within-sample term. The result is
// exactly symmetric in its arguments.
double Mmd(const std::vector<EmbeddingVector>& a,
           const std::vector<EmbeddingVector>& b, double bandwidth);

// Median pairwise Euclidean distance; pools larger than `max_points` are
// thinned by a fixed stride first.
double MedianPairwiseDistance(const std::vector<EmbeddingVector>& points,
                              size_t max_points = 1500);

std::vector<double> CodeHistogram(const std::vector<Document>& docs,
                                  size_t num_codes);

// Total-variation distance between the normalized code histograms.
double CodeHistogramTv(const std::vector<Document>& synthetic,
                       const std::vector<Document>& reference,
                       size_t num_codes);

struct ClassifierOptions {
  size_t epochs = 30;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  uint64_t seed = 0;

  bool operator==(const ClassifierOptions&) const = default;
  nlohmann::json ToJson() const;
  static ClassifierOptions FromJson(const nlohmann::json& j);
};

// Multinomial logistic regression over L2-normalized token-count features.
struct Classifier {
  size_t num_classes = 0;
  size_t num_features = 0;
  // Row c holds the num_features weights of class c followed by its bias.
  std::vector<double> weights;

  size_t Predict(const Document& doc) const;
};

std::vector<double> TokenFeatures(const Document& doc, size_t vocab_size);

// Labels are the document codes. Throws std::invalid_argument when fewer
// than two classes are present.
Classifier TrainClassifier(const std::vector<Document>& train,
                           size_t num_classes, size_t vocab_size,
                           const ClassifierOptions& options);

struct ClassificationScores {
  double accuracy = 0.0;
  // Unweighted mean F1 over the classes that occur in the test labels.
  double macro_f1 = 0.0;
};

ClassificationScores ScorePredictions(const std::vector<size_t>& truth,
                                      const std::vector<size_t>& predicted);
ClassificationScores Evaluate(const Classifier& clf,
                              const std::vector<Document>& test);

struct MetricsReport {
  std::string label;
  size_t size = 0;
  double mmd = 0.0;
  double bandwidth = 0.0;
  double code_tv = 0.0;
  double downstream_accuracy = 0.0;
  double downstream_macro_f1 = 0.0;
  uint64_t seed = 0;
  std::string config_fingerprint;

  nlohmann::json ToJson() const;
};

}  // namespace fedsyn

#endif  // FEDSYN_EVAL_H_
