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

#ifndef FEDSYN_GENERATOR_H_
#define FEDSYN_GENERATOR_H_

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/random.h"

namespace fedsyn {

// Code-conditioned bigram logit table. Layout is
// logits[(code * V + prev) * V + next], stable across checkpoints.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(size_t num_codes, size_t vocab_size);

  size_t num_codes() const { return num_codes_; }
  size_t vocab_size() const { return vocab_size_; }
  size_t size() const { return logits_.size(); }

  size_t RowOffset(size_t code, Token prev) const {
    return (code * vocab_size_ + prev) * vocab_size_;
  }
  double& at(size_t code, Token prev, Token next) {
    return logits_[RowOffset(code, prev) + next];
  }
  double at(size_t code, Token prev, Token next) const {
    return logits_[RowOffset(code, prev) + next];
  }
  std::span<const double> Row(size_t code, Token prev) const {
    return {logits_.data() + RowOffset(code, prev), vocab_size_};
  }

  std::vector<double>& flat() { return logits_; }
  const std::vector<double>& flat() const { return logits_; }

  bool operator==(const ModelParams&) const = default;

 private:
  size_t num_codes_ = 0;
  size_t vocab_size_ = 0;
  std::vector<double> logits_;
};

struct GenSample {
  std::vector<Token> tokens;
  size_t code = 0;
  double log_prob = 0.0;

  Document AsDocument() const { return {tokens, code}; }
  bool operator==(const GenSample&) const = default;
};

// Generated candidates grouped by code. index_sets[j] lists positions in
// `samples` whose code is j, in increasing order.
struct SyntheticDataset {
  size_t num_codes = 0;
  std::vector<GenSample> samples;
  std::vector<std::vector<size_t>> index_sets;
  // Aggregated (noisy) votes per sample, when refinement has run.
  std::vector<double> votes;
  // Pre-noise votes; only populated in non-private auditing mode.
  std::vector<double> raw_votes;

  size_t size() const { return samples.size(); }
  std::vector<Document> Documents() const;

  // Rebuilds index_sets from the sample codes.
  void ReindexCodes();
};

// Throws CorpusError if a token is out of range or the code does not exist.
void CheckDocument(const ModelParams& params, const Document& doc);

// Sum over transitions of log softmax(theta[code][prev])[next].
double LogProb(const ModelParams& params, const Document& doc);

// Gradient of -LogProb with respect to the flat logits. Only rows visited by
// the document are nonzero.
std::vector<double> GradNegLogProb(const ModelParams& params,
                                   const Document& doc);

// Gradient restricted to the rows a document visits, rows sorted by offset.
struct SparseGradient {
  size_t dim = 0;
  size_t row_width = 0;
  std::vector<size_t> row_offsets;
  std::vector<double> values;  // row_offsets.size() * row_width

  double SquaredNorm() const;
  // out += scale * gradient
  void AddTo(std::span<double> out, double scale) const;
  std::vector<double> ToDense() const;
};

SparseGradient SparseGradNegLogProb(const ModelParams& params,
                                    const Document& doc);

struct SamplingOptions {
  size_t max_length = tokenizer::kDefaultMaxLength;
  double temperature = 1.0;
  // Argmax decoding, the temperature -> 0 limit. Ties go to the lower token.
  bool greedy = false;
};

// Ancestral sampling from BOS until EOS or max_length tokens.
GenSample Sample(const ModelParams& params, size_t code,
                 const SamplingOptions& options, Rng& rng);

// counts[j] samples for code j, emitted code by code.
SyntheticDataset GenerateSynthetic(const ModelParams& params,
                                   const std::vector<size_t>& counts,
                                   const SamplingOptions& options, Rng& rng);

// Additively smoothed maximum-likelihood bigram fit:
// theta = log((count + alpha) / (row_total + alpha * V)).
ModelParams FitSmoothedBigram(const std::vector<Document>& docs,
                              size_t num_codes, size_t vocab_size,
                              double smoothing);

// Mean negative log-likelihood per document.
double MeanNll(const ModelParams& params, const std::vector<Document>& docs);

// Binary checkpoint: "FSYNCKPT", u32 version, u32 codes, u32 vocab, then
// codes * vocab * vocab little-endian float64 in flat layout order.
void SaveCheckpoint(const std::filesystem::path& path,
                    const ModelParams& params);
ModelParams LoadCheckpoint(const std::filesystem::path& path);

}  // namespace fedsyn

#endif  // FEDSYN_GENERATOR_H_
