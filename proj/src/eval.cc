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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedsyn/random.h"

namespace fedsyn {
namespace {

bool CanonicalFirst(const std::vector<EmbeddingVector>& a,
                    const std::vector<EmbeddingVector>& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].values != b[i].values) return a[i].values < b[i].values;
  }
  return true;
}

double WithinMean(const std::vector<EmbeddingVector>& a, double bandwidth) {
  const size_t m = a.size();
  if (m < 2) return 1.0;
  double s = 0.0;
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = i + 1; j < m; ++j) {
      s += GaussianKernel(a[i].values, a[j].values, bandwidth);
    }
  }
  return 2.0 * s / (static_cast<double>(m) * static_cast<double>(m - 1));
}

}  // namespace

double GaussianKernel(std::span<const double> x, std::span<const double> y,
                      double bandwidth) {
  return std::exp(-SquaredDistance(x, y) / (2.0 * bandwidth * bandwidth));
}

double Mmd(const std::vector<EmbeddingVector>& a,
           const std::vector<EmbeddingVector>& b, double bandwidth) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty MMD sample");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be > 0");
  const auto& x = CanonicalFirst(a, b) ? a : b;
  const auto& y = &x == &a ? b : a;
  double cross = 0.0;
  for (const auto& xi : x) {
    for (const auto& yj : y) cross += GaussianKernel(xi.values, yj.values, bandwidth);
  }
  cross /= static_cast<double>(x.size()) * static_cast<double>(y.size());
  const double value =
      WithinMean(x, bandwidth) + WithinMean(y, bandwidth) - 2.0 * cross;
  return std::max(0.0, value);
}

double MedianPairwiseDistance(const std::vector<EmbeddingVector>& points,
                              size_t max_points) {
  if (points.size() < 2) throw std::invalid_argument("need two points");
  std::vector<const EmbeddingVector*> pool;
  const size_t stride =
      std::max<size_t>(1, (points.size() + max_points - 1) / max_points);
  for (size_t i = 0; i < points.size(); i += stride) pool.push_back(&points[i]);
  std::vector<double> dists;
  dists.reserve(pool.size() * (pool.size() - 1) / 2);
  for (size_t i = 0; i < pool.size(); ++i) {
    for (size_t j = i + 1; j < pool.size(); ++j) {
      dists.push_back(
          std::sqrt(SquaredDistance(pool[i]->values, pool[j]->values)));
    }
  }
  auto mid = dists.begin() + static_cast<ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid;
}

std::vector<double> CodeHistogram(const std::vector<Document>& docs,
                                  size_t num_codes) {
  std::vector<double> h(num_codes, 0.0);
  for (const auto& d : docs) {
    if (d.code >= num_codes) throw std::invalid_argument("code out of range");
    h[d.code] += 1.0;
  }
  const double n = static_cast<double>(docs.size());
  for (auto& x : h) x /= n;
  return h;
}

double CodeHistogramTv(const std::vector<Document>& synthetic,
                       const std::vector<Document>& reference,
                       size_t num_codes) {
  if (synthetic.empty() || reference.empty()) {
    throw std::invalid_argument("empty histogram input");
  }
  const auto p = CodeHistogram(synthetic, num_codes);
  const auto q = CodeHistogram(reference, num_codes);
  double tv = 0.0;
  for (size_t j = 0; j < num_codes; ++j) tv += std::abs(p[j] - q[j]);
  return std::clamp(0.5 * tv, 0.0, 1.0);
}

nlohmann::json ClassifierOptions::ToJson() const {
  return {{"epochs", epochs},
          {"learning_rate", learning_rate},
          {"l2", l2},
          {"seed", seed}};
}

ClassifierOptions ClassifierOptions::FromJson(const nlohmann::json& j) {
  ClassifierOptions o;
  o.epochs = j.value("epochs", o.epochs);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.l2 = j.value("l2", o.l2);
  o.seed = j.value("seed", o.seed);
  return o;
}

std::vector<double> TokenFeatures(const Document& doc, size_t vocab_size) {
  std::vector<double> f(vocab_size, 0.0);
  for (Token t : doc.tokens) {
    if (t < vocab_size) f[t] += 1.0;
  }
  double norm = 0.0;
  for (double x : f) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (auto& x : f) x /= norm;
  }
  return f;
}

namespace {

void Logits(const Classifier& clf, const std::vector<double>& f,
            std::vector<double>& out) {
  const size_t stride = clf.num_features + 1;
  out.assign(clf.num_classes, 0.0);
  for (size_t c = 0; c < clf.num_classes; ++c) {
    const double* w = &clf.weights[c * stride];
    double z = w[clf.num_features];
    for (size_t k = 0; k < clf.num_features; ++k) z += w[k] * f[k];
    out[c] = z;
  }
}

}  // namespace

size_t Classifier::Predict(const Document& doc) const {
  std::vector<double> z;
  Logits(*this, TokenFeatures(doc, num_features), z);
  return static_cast<size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

Classifier TrainClassifier(const std::vector<Document>& train,
                           size_t num_classes, size_t vocab_size,
                           const ClassifierOptions& options) {
  std::vector<bool> seen(num_classes, false);
  size_t distinct = 0;
  for (const auto& d : train) {
    if (d.code >= num_classes) throw std::invalid_argument("label out of range");
    if (!seen[d.code]) {
      seen[d.code] = true;
      ++distinct;
    }
  }
  if (distinct < 2) {
    throw std::invalid_argument("classifier needs at least two classes");
  }

  Classifier clf;
  clf.num_classes = num_classes;
  clf.num_features = vocab_size;
  const size_t stride = vocab_size + 1;
  clf.weights.assign(num_classes * stride, 0.0);

  std::vector<std::vector<double>> features;
  features.reserve(train.size());
  for (const auto& d : train) features.push_back(TokenFeatures(d, vocab_size));

  Rng rng(options.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> z;
  const double decay = 1.0 - options.learning_rate * options.l2;
  for (size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t i : order) {
      const auto& f = features[i];
      Logits(clf, f, z);
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (auto& x : z) {
        x = std::exp(x - m);
        s += x;
      }
      for (size_t c = 0; c < num_classes; ++c) {
        const double err = z[c] / s - (c == train[i].code ? 1.0 : 0.0);
        double* w = &clf.weights[c * stride];
        for (size_t k = 0; k < vocab_size; ++k) {
          w[k] = decay * w[k] - options.learning_rate * err * f[k];
        }
        w[vocab_size] -= options.learning_rate * err;
      }
    }
  }
  return clf;
}

ClassificationScores ScorePredictions(const std::vector<size_t>& truth,
                                      const std::vector<size_t>& predicted) {
  if (truth.size() != predicted.size() || truth.empty()) {
    throw std::invalid_argument("prediction and label counts differ");
  }
  size_t classes = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    classes = std::max({classes, truth[i] + 1, predicted[i] + 1});
  }
  std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
  std::vector<bool> present(classes, false);
  size_t correct = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    present[truth[i]] = true;
    if (truth[i] == predicted[i]) {
      ++correct;
      tp[truth[i]] += 1.0;
    } else {
      fp[predicted[i]] += 1.0;
      fn[truth[i]] += 1.0;
    }
  }
  ClassificationScores scores;
  scores.accuracy =
      static_cast<double>(correct) / static_cast<double>(truth.size());
  double f1_sum = 0.0;
  size_t counted = 0;
  for (size_t c = 0; c < classes; ++c) {
    if (!present[c]) continue;
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1_sum += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
    ++counted;
  }
  scores.macro_f1 = f1_sum / static_cast<double>(counted);
  return scores;
}

ClassificationScores Evaluate(const Classifier& clf,
                              const std::vector<Document>& test) {
  std::vector<size_t> truth, predicted;
  for (const auto& d : test) {
    truth.push_back(d.code);
    predicted.push_back(clf.Predict(d));
  }
  return ScorePredictions(truth, predicted);
}

nlohmann::json MetricsReport::ToJson() const {
  return {{"label", label},
          {"size", size},
          {"mmd", mmd},
          {"bandwidth", bandwidth},
          {"code_tv", code_tv},
          {"downstream_accuracy", downstream_accuracy},
          {"downstream_macro_f1", downstream_macro_f1},
          {"seed", seed},
          {"config_fingerprint", config_fingerprint}};
}

}  // namespace fedsyn
