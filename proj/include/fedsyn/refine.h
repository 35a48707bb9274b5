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

#ifndef FEDSYN_REFINE_H_
#define FEDSYN_REFINE_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/generator.h"
#include "fedsyn/privacy.h"
#include "fedsyn/random.h"

namespace fedsyn {

inline constexpr size_t kDefaultEmbeddingDim = 256;

// Unit-norm hashed embedding; `empty` marks documents with no token 3-gram,
// whose values are all zero.
struct EmbeddingVector {
  std::vector<double> values;
  bool empty = false;
};

// Signed feature hashing of token 3-grams into `dim` buckets (a power of
// two), then L2 normalization.
EmbeddingVector Embed(const Document& doc, size_t dim = kDefaultEmbeddingDim);
std::vector<EmbeddingVector> EmbedAll(const std::vector<Document>& docs,
                                      size_t dim = kDefaultEmbeddingDim);

double SquaredDistance(std::span<const double> a, std::span<const double> b);

struct VoteVector {
  std::vector<double> values;

  size_t size() const { return values.size(); }
};

struct LocalVoteResult {
  VoteVector noisy;
  VoteVector raw;
  // Local examples whose code had no synthetic candidate.
  size_t skipped = 0;
};

// Positions (within `candidates`) of the k nearest candidates to `query` by
// Euclidean distance, ties to the lower position. Returns all positions when
// there are at most k candidates.
std::vector<size_t> NearestNeighbors(
    const EmbeddingVector& query,
    const std::vector<const EmbeddingVector*>& candidates, size_t k);

// KNN voting for one client: every local document votes +1 for each of its k
// nearest same-code synthetic samples, then Gaussian noise calibrated for
// sensitivity sqrt(k) is added to every coordinate.
LocalVoteResult LocalVote(const SyntheticDataset& synthetic,
                          std::span<const EmbeddingVector> synthetic_embeddings,
                          const ClientDataset& ds, size_t k,
                          const PrivacyBudget& budget, Ledger* ledger,
                          Rng& rng, size_t dim = kDefaultEmbeddingDim,
                          Neighboring neighboring = Neighboring::kAddRemove);

LocalVoteResult LocalVote(const SyntheticDataset& synthetic,
                          const ClientDataset& ds, size_t k,
                          const PrivacyBudget& budget, Ledger* ledger,
                          Rng& rng, size_t dim = kDefaultEmbeddingDim,
                          Neighboring neighboring = Neighboring::kAddRemove);

// Coordinate-wise sum. An empty list yields a zero vector of `length`.
VoteVector AggregateVotes(const std::vector<VoteVector>& votes, size_t length);

// Per code: clamp at 0, then L1-normalize over the code's index set, or
// uniform when the clamped slice sums to 0.
std::vector<std::vector<double>> PerCodeProbabilities(
    const VoteVector& votes, const std::vector<std::vector<size_t>>& index_sets);

// max(1, floor(rate * n)) capped at n.
size_t SampleCount(size_t n, double rate);

// Sequential weighted draws without replacement: each step picks a remaining
// item with probability w_i / W, or uniformly when W == 0.
std::vector<size_t> SampleWithoutReplacement(std::span<const size_t> indices,
                                             double rate,
                                             std::span<const double> probs,
                                             Rng& rng);

struct RefineOptions {
  size_t k = 5;
  double rate = 0.2;
  // Ignore the votes and sample uniformly within each code.
  bool uniform = false;
  // Keep pre-noise votes on the output. Not private.
  bool audit = false;
  size_t embedding_dim = kDefaultEmbeddingDim;
  Neighboring neighboring = Neighboring::kAddRemove;
  uint64_t seed = 0;
};

struct RefineResult {
  SyntheticDataset refined;
  VoteVector votes;      // aggregated noisy votes over the candidates
  VoteVector raw_votes;  // aggregated pre-noise votes (audit only)
  size_t skipped = 0;
};

// Voters are processed in client-id order with per-client derived streams;
// `vote_budgets[i]` is the voting budget of voters[i].
RefineResult Refine(const SyntheticDataset& synthetic,
                    const std::vector<ClientDataset>& voters,
                    const std::vector<PrivacyBudget>& vote_budgets,
                    const RefineOptions& options, Ledger* ledger);

}  // namespace fedsyn

#endif  // FEDSYN_REFINE_H_
