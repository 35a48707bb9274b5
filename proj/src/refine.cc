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

#include "fedsyn/refine.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedsyn {
namespace {

constexpr uint64_t kTrigramSalt = 0x5bd1e9955bd1e995ULL;

}  // namespace

EmbeddingVector Embed(const Document& doc, size_t dim) {
  if (dim == 0 || !std::has_single_bit(dim)) {
    throw std::invalid_argument("embedding dimension must be a power of two");
  }
  EmbeddingVector out;
  out.values.assign(dim, 0.0);
  const auto& t = doc.tokens;
  if (t.size() < 3) {
    out.empty = true;
    return out;
  }
  for (size_t i = 2; i < t.size(); ++i) {
    const uint64_t key = static_cast<uint64_t>(t[i - 2]) |
                         (static_cast<uint64_t>(t[i - 1]) << 21) |
                         (static_cast<uint64_t>(t[i]) << 42);
    const uint64_t h = Mix64(key ^ kTrigramSalt);
    out.values[h & (dim - 1)] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : out.values) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    out.empty = true;
    return out;
  }
  for (auto& x : out.values) x /= norm;
  return out;
}

std::vector<EmbeddingVector> EmbedAll(const std::vector<Document>& docs,
                                      size_t dim) {
  std::vector<EmbeddingVector> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(Embed(d, dim));
  return out;
}

double SquaredDistance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("embedding dimensions differ");
  }
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<size_t> NearestNeighbors(
    const EmbeddingVector& query,
    const std::vector<const EmbeddingVector*>& candidates, size_t k) {
  std::vector<size_t> out;
  if (candidates.size() <= k) {
    out.resize(candidates.size());
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  std::vector<std::pair<double, size_t>> scored;
  scored.reserve(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    scored.emplace_back(SquaredDistance(query.values, candidates[i]->values),
                        i);
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<ptrdiff_t>(k),
                    scored.end());
  for (size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

LocalVoteResult LocalVote(const SyntheticDataset& synthetic,
                          std::span<const EmbeddingVector> synthetic_embeddings,
                          const ClientDataset& ds, size_t k,
                          const PrivacyBudget& budget, Ledger* ledger,
                          Rng& rng, size_t dim, Neighboring neighboring) {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (synthetic_embeddings.size() != synthetic.size()) {
    throw std::invalid_argument("one embedding per synthetic sample expected");
  }
  LocalVoteResult result;
  result.raw.values.assign(synthetic.size(), 0.0);

  std::vector<std::vector<const EmbeddingVector*>> pools(synthetic.num_codes);
  for (size_t j = 0; j < synthetic.index_sets.size(); ++j) {
    for (size_t idx : synthetic.index_sets[j]) {
      pools[j].push_back(&synthetic_embeddings[idx]);
    }
  }
  for (const auto& doc : ds.documents) {
    if (doc.code >= pools.size() || pools[doc.code].empty()) {
      ++result.skipped;
      continue;
    }
    const EmbeddingVector z = Embed(doc, dim);
    const auto& index_set = synthetic.index_sets[doc.code];
    for (size_t pos : NearestNeighbors(z, pools[doc.code], k)) {
      result.raw.values[index_set[pos]] += 1.0;
    }
  }

  const double sensitivity = CountSensitivity(k, neighboring);
  const double sigma = CalibrateAnalyticGaussian(budget, sensitivity);
  if (budget.is_private() && ledger) {
    ledger->Append({ds.client_id, Phase::kVote, budget, sensitivity, sigma, 1});
  }
  result.noisy.values = AddGaussianNoise(result.raw.values, sigma, rng);
  return result;
}

LocalVoteResult LocalVote(const SyntheticDataset& synthetic,
                          const ClientDataset& ds, size_t k,
                          const PrivacyBudget& budget, Ledger* ledger,
                          Rng& rng, size_t dim, Neighboring neighboring) {
  const auto embeddings = EmbedAll(synthetic.Documents(), dim);
  return LocalVote(synthetic, embeddings, ds, k, budget, ledger, rng, dim,
                   neighboring);
}

VoteVector AggregateVotes(const std::vector<VoteVector>& votes,
                          size_t length) {
  VoteVector total;
  total.values.assign(length, 0.0);
  for (const auto& v : votes) {
    if (v.size() != length) throw std::invalid_argument("vote length mismatch");
    for (size_t i = 0; i < length; ++i) total.values[i] += v.values[i];
  }
  return total;
}

std::vector<std::vector<double>> PerCodeProbabilities(
    const VoteVector& votes,
    const std::vector<std::vector<size_t>>& index_sets) {
  std::vector<std::vector<double>> out;
  out.reserve(index_sets.size());
  for (const auto& set : index_sets) {
    std::vector<double> p;
    p.reserve(set.size());
    double total = 0.0;
    for (size_t idx : set) {
      if (idx >= votes.size()) throw std::invalid_argument("index out of range");
      const double v = std::max(0.0, votes.values[idx]);
      p.push_back(v);
      total += v;
    }
    if (total > 0.0) {
      for (auto& x : p) x /= total;
    } else {
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    }
    out.push_back(std::move(p));
  }
  return out;
}

size_t SampleCount(size_t n, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("sampling rate must lie in (0, 1]");
  }
  // The 1e-9 guard keeps exact products such as 0.7 * 10 from flooring to 6.
  const auto m = static_cast<size_t>(
      std::floor(rate * static_cast<double>(n) + 1e-9));
  return std::min(std::max<size_t>(1, m), n);
}

std::vector<size_t> SampleWithoutReplacement(std::span<const size_t> indices,
                                             double rate,
                                             std::span<const double> probs,
                                             Rng& rng) {
  if (probs.size() != indices.size()) {
    throw std::invalid_argument("one probability per index expected");
  }
  const size_t m = SampleCount(indices.size(), rate);
  std::vector<size_t> remaining(indices.begin(), indices.end());
  std::vector<double> weights(probs.begin(), probs.end());
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("negative sampling weight");
  }
  std::vector<size_t> selected;
  selected.reserve(m);
  for (size_t step = 0; step < m; ++step) {
    // Recomputed rather than decremented so rounding never leaves a phantom
    // positive mass on zero-weight items.
    double w_total = 0.0;
    for (double w : weights) w_total += w;
    size_t pick;
    if (w_total > 0.0) {
      pick = SampleCategorical(weights, rng);
    } else {
      std::uniform_int_distribution<size_t> unif(0, remaining.size() - 1);
      pick = unif(rng);
    }
    selected.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<ptrdiff_t>(pick));
    weights.erase(weights.begin() + static_cast<ptrdiff_t>(pick));
  }
  return selected;
}

RefineResult Refine(const SyntheticDataset& synthetic,
                    const std::vector<ClientDataset>& voters,
                    const std::vector<PrivacyBudget>& vote_budgets,
                    const RefineOptions& options, Ledger* ledger) {
  if (synthetic.size() == 0) {
    throw std::invalid_argument("cannot refine an empty synthetic set");
  }
  if (vote_budgets.size() != voters.size()) {
    throw std::invalid_argument("one voting budget per voter expected");
  }
  const auto embeddings =
      EmbedAll(synthetic.Documents(), options.embedding_dim);

  std::vector<size_t> order(voters.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return voters[a].client_id < voters[b].client_id;
  });

  RefineResult result;
  std::vector<VoteVector> noisy, raw;
  for (size_t i : order) {
    Rng rng = MakeRng(options.seed, "vote", voters[i].client_id);
    LocalVoteResult vote =
        LocalVote(synthetic, embeddings, voters[i], options.k, vote_budgets[i],
                  ledger, rng, options.embedding_dim, options.neighboring);
    result.skipped += vote.skipped;
    noisy.push_back(std::move(vote.noisy));
    raw.push_back(std::move(vote.raw));
  }
  result.votes = AggregateVotes(noisy, synthetic.size());
  result.raw_votes = AggregateVotes(raw, synthetic.size());

  std::vector<std::vector<double>> probs;
  if (options.uniform) {
    for (const auto& set : synthetic.index_sets) {
      probs.emplace_back(set.size(), 1.0 / static_cast<double>(set.size()));
    }
  } else {
    probs = PerCodeProbabilities(result.votes, synthetic.index_sets);
  }

  SyntheticDataset& out = result.refined;
  out.num_codes = synthetic.num_codes;
  out.index_sets.assign(out.num_codes, {});
  for (size_t j = 0; j < synthetic.index_sets.size(); ++j) {
    const auto& set = synthetic.index_sets[j];
    if (set.empty()) continue;
    Rng rng = MakeRng(options.seed, "resample", j);
    for (size_t idx :
         SampleWithoutReplacement(set, options.rate, probs[j], rng)) {
      out.index_sets[j].push_back(out.samples.size());
      out.samples.push_back(synthetic.samples[idx]);
      out.votes.push_back(result.votes.values[idx]);
      if (options.audit) out.raw_votes.push_back(result.raw_votes.values[idx]);
    }
  }
  if (!options.audit) result.raw_votes.values.clear();
  return result;
}

}  // namespace fedsyn
