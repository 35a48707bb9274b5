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

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

namespace fedsyn {
namespace {

double LogSumExp(std::span<const double> row) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : row) m = std::max(m, x);
  double s = 0.0;
  for (double x : row) s += std::exp(x - m);
  return m + std::log(s);
}

void Softmax(std::span<const double> row, double inv_temperature,
             std::vector<double>& out) {
  out.resize(row.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double x : row) m = std::max(m, x * inv_temperature);
  double s = 0.0;
  for (size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] * inv_temperature - m);
    s += out[i];
  }
  for (auto& p : out) p /= s;
}

constexpr std::array<char, 8> kMagic = {'F', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

void PutU32(std::ostream& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutU64(std::ostream& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t GetLe(std::istream& in, int bytes) {
  uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    int c = in.get();
    if (c == EOF) throw CorpusError("truncated checkpoint");
    v |= static_cast<uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

ModelParams::ModelParams(size_t num_codes, size_t vocab_size)
    : num_codes_(num_codes),
      vocab_size_(vocab_size),
      logits_(num_codes * vocab_size * vocab_size, 0.0) {}

std::vector<Document> SyntheticDataset::Documents() const {
  std::vector<Document> docs;
  docs.reserve(samples.size());
  for (const auto& s : samples) docs.push_back(s.AsDocument());
  return docs;
}

void SyntheticDataset::ReindexCodes() {
  index_sets.assign(num_codes, {});
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].code >= num_codes) {
      throw CorpusError("synthetic sample code out of range");
    }
    index_sets[samples[i].code].push_back(i);
  }
}

void CheckDocument(const ModelParams& params, const Document& doc) {
  if (doc.code >= params.num_codes()) {
    throw CorpusError("document code out of range for model");
  }
  if (doc.tokens.empty()) throw CorpusError("document has no tokens");
  for (Token t : doc.tokens) {
    if (t >= params.vocab_size()) throw CorpusError("token out of range");
  }
}

double LogProb(const ModelParams& params, const Document& doc) {
  CheckDocument(params, doc);
  double lp = 0.0;
  for (size_t l = 1; l < doc.tokens.size(); ++l) {
    auto row = params.Row(doc.code, doc.tokens[l - 1]);
    lp += row[doc.tokens[l]] - LogSumExp(row);
  }
  return lp;
}

double SparseGradient::SquaredNorm() const {
  double s = 0.0;
  for (double x : values) s += x * x;
  return s;
}

void SparseGradient::AddTo(std::span<double> out, double scale) const {
  for (size_t r = 0; r < row_offsets.size(); ++r) {
    const double* src = &values[r * row_width];
    double* dst = &out[row_offsets[r]];
    for (size_t k = 0; k < row_width; ++k) dst[k] += scale * src[k];
  }
}

std::vector<double> SparseGradient::ToDense() const {
  std::vector<double> dense(dim, 0.0);
  for (size_t r = 0; r < row_offsets.size(); ++r) {
    std::copy_n(&values[r * row_width], row_width, &dense[row_offsets[r]]);
  }
  return dense;
}

SparseGradient SparseGradNegLogProb(const ModelParams& params,
                                    const Document& doc) {
  CheckDocument(params, doc);
  const size_t v = params.vocab_size();
  // prev token -> (visit count, next-token hits)
  std::map<Token, std::pair<double, std::vector<double>>> rows;
  for (size_t l = 1; l < doc.tokens.size(); ++l) {
    auto& [visits, hits] = rows[doc.tokens[l - 1]];
    if (hits.empty()) hits.assign(v, 0.0);
    visits += 1.0;
    hits[doc.tokens[l]] += 1.0;
  }
  SparseGradient g;
  g.dim = params.size();
  g.row_width = v;
  g.values.reserve(rows.size() * v);
  std::vector<double> probs;
  for (const auto& [prev, entry] : rows) {
    const auto& [visits, hits] = entry;
    g.row_offsets.push_back(params.RowOffset(doc.code, prev));
    Softmax(params.Row(doc.code, prev), 1.0, probs);
    for (size_t k = 0; k < v; ++k) {
      g.values.push_back(visits * probs[k] - hits[k]);
    }
  }
  return g;
}

std::vector<double> GradNegLogProb(const ModelParams& params,
                                   const Document& doc) {
  return SparseGradNegLogProb(params, doc).ToDense();
}

GenSample Sample(const ModelParams& params, size_t code,
                 const SamplingOptions& options, Rng& rng) {
  if (code >= params.num_codes()) throw CorpusError("code out of range");
  if (options.max_length < 2) throw CorpusError("max_length must be >= 2");
  if (!options.greedy && !(options.temperature > 0.0)) {
    throw CorpusError("temperature must be positive");
  }
  GenSample out;
  out.code = code;
  out.tokens.push_back(tokenizer::kBos);
  std::vector<double> probs;
  while (out.tokens.size() < options.max_length) {
    auto row = params.Row(code, out.tokens.back());
    Token next;
    if (options.greedy) {
      next = static_cast<Token>(std::max_element(row.begin(), row.end()) -
                                row.begin());
    } else {
      Softmax(row, 1.0 / options.temperature, probs);
      next = static_cast<Token>(SampleCategorical(probs, rng));
    }
    out.tokens.push_back(next);
    if (next == tokenizer::kEos) break;
  }
  out.log_prob = LogProb(params, out.AsDocument());
  return out;
}

SyntheticDataset GenerateSynthetic(const ModelParams& params,
                                   const std::vector<size_t>& counts,
                                   const SamplingOptions& options, Rng& rng) {
  if (counts.size() != params.num_codes()) {
    throw CorpusError("allocation length does not match code count");
  }
  SyntheticDataset ds;
  ds.num_codes = params.num_codes();
  ds.index_sets.assign(ds.num_codes, {});
  for (size_t j = 0; j < counts.size(); ++j) {
    for (size_t k = 0; k < counts[j]; ++k) {
      ds.index_sets[j].push_back(ds.samples.size());
      ds.samples.push_back(Sample(params, j, options, rng));
    }
  }
  return ds;
}

ModelParams FitSmoothedBigram(const std::vector<Document>& docs,
                              size_t num_codes, size_t vocab_size,
                              double smoothing) {
  if (!(smoothing > 0.0)) throw CorpusError("smoothing must be positive");
  ModelParams counts(num_codes, vocab_size);
  for (const auto& d : docs) {
    CheckDocument(counts, d);
    for (size_t l = 1; l < d.tokens.size(); ++l) {
      counts.at(d.code, d.tokens[l - 1], d.tokens[l]) += 1.0;
    }
  }
  ModelParams params(num_codes, vocab_size);
  for (size_t c = 0; c < num_codes; ++c) {
    for (Token prev = 0; prev < vocab_size; ++prev) {
      double total = 0.0;
      for (double x : counts.Row(c, prev)) total += x;
      const double denom = total + smoothing * static_cast<double>(vocab_size);
      for (Token next = 0; next < vocab_size; ++next) {
        params.at(c, prev, next) =
            std::log((counts.at(c, prev, next) + smoothing) / denom);
      }
    }
  }
  return params;
}

double MeanNll(const ModelParams& params, const std::vector<Document>& docs) {
  if (docs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& d : docs) total -= LogProb(params, d);
  return total / static_cast<double>(docs.size());
}

void SaveCheckpoint(const std::filesystem::path& path,
                    const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  PutU32(out, kCheckpointVersion);
  PutU32(out, static_cast<uint32_t>(params.num_codes()));
  PutU32(out, static_cast<uint32_t>(params.vocab_size()));
  for (double x : params.flat()) PutU64(out, std::bit_cast<uint64_t>(x));
  if (!out) throw CorpusError("failed writing checkpoint " + path.string());
}

ModelParams LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) {
    throw CorpusError(path.string() + " is not a fedsyn checkpoint");
  }
  const auto version = static_cast<uint32_t>(GetLe(in, 4));
  if (version != kCheckpointVersion) {
    throw CorpusError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  const auto codes = static_cast<size_t>(GetLe(in, 4));
  const auto vocab = static_cast<size_t>(GetLe(in, 4));
  ModelParams params(codes, vocab);
  for (auto& x : params.flat()) x = std::bit_cast<double>(GetLe(in, 8));
  if (in.peek() != EOF) throw CorpusError("trailing bytes in checkpoint");
  return params;
}

}  // namespace fedsyn
