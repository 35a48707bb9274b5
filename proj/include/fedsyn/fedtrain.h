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

#ifndef FEDSYN_FEDTRAIN_H_
#define FEDSYN_FEDTRAIN_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/generator.h"
#include "fedsyn/privacy.h"
#include "fedsyn/random.h"
#include "json.hpp"

namespace fedsyn {

enum class AggregationDenominator {
  // Mean over the strong clients that actually trained.
  kParticipating,
  // Divide by every client in the federation, strong or weak.
  kAllClients,
};

struct TrainConfig {
  size_t rounds = 3;
  size_t local_iters = 2;
  size_t batch_size = 256;
  // +infinity disables clipping (only valid together with zero noise).
  double clip_norm = 1.0;
  double local_lr = 20.0;
  double server_lr = 1.0;
  // Noise multiplier sigma_s: the per-step noise on the clipped sum has
  // standard deviation noise_multiplier * clip_norm.
  double noise_multiplier = 0.0;
  uint64_t seed = 0;
  AggregationDenominator denominator = AggregationDenominator::kParticipating;

  void Validate() const;
  bool operator==(const TrainConfig&) const = default;
  nlohmann::json ToJson() const;
  static TrainConfig FromJson(const nlohmann::json& j);
};

struct ClientUpdate {
  size_t client_id = 0;
  // theta_i - theta_global, same layout as ModelParams::flat().
  std::vector<double> delta;
  // theta_i itself, kept so the server step can be formed without
  // re-adding the delta.
  std::vector<double> local;
};

// g / max(1, ||g|| / clip_norm).
std::vector<double> Clip(std::vector<double> g, double clip_norm);

// Scale factor Clip() applies to a vector with the given norm.
double ClipFactor(double norm, double clip_norm);

// Observes what crosses the per-sample boundary inside DpSgdStep.
struct StepTrace {
  std::vector<double> clipped_norms;  // one per sample, after clipping
  size_t noise_draws = 0;             // noise vectors added per step
};

// One DP-SGD step: per-sample gradients are clipped, summed, noised once and
// divided by the batch size; then params -= local_lr * average.
void DpSgdStep(ModelParams& params, std::span<const Document> batch,
               const TrainConfig& cfg, Rng& rng, StepTrace* trace = nullptr);

// Fixed-size minibatches drawn from a seeded permutation of the dataset; a
// new permutation starts whenever fewer than batch_size indices remain. When
// the dataset is smaller than batch_size every batch is the whole dataset.
class MinibatchSchedule {
 public:
  MinibatchSchedule(size_t dataset_size, size_t batch_size, Rng& rng);
  std::vector<size_t> Next();
  size_t batch_size() const { return batch_size_; }

 private:
  void Reshuffle();

  size_t dataset_size_;
  size_t batch_size_;
  Rng& rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

ClientUpdate LocalRound(const ModelParams& global, const ClientDataset& ds,
                        const TrainConfig& cfg, Rng& rng);

// Coordinate-wise mean of the deltas.
std::vector<double> Aggregate(const std::vector<ClientUpdate>& updates);
// Sum of the deltas divided by `denominator`.
std::vector<double> Aggregate(const std::vector<ClientUpdate>& updates,
                              size_t denominator);

struct RoundMetrics {
  size_t round = 0;
  double mean_delta_norm = 0.0;
  double train_nll = 0.0;

  nlohmann::json ToJson() const;
};

struct FinetuneResult {
  ModelParams params;
  double noise_multiplier = 0.0;
  std::vector<RoundMetrics> rounds;
};

// Federated DP finetuning over the strong clients. A present, private
// `train_budget` fixes the noise multiplier through per-step basic
// composition and the analytic Gaussian mechanism, and every strong client
// gets one Train ledger entry. An absent or non-private budget trains with
// cfg.noise_multiplier (normally 0) and charges nothing. `total_clients` is
// only consulted for AggregationDenominator::kAllClients.
FinetuneResult RunFinetuning(const ModelParams& init,
                             const std::vector<ClientDataset>& strong,
                             const TrainConfig& cfg,
                             std::optional<PrivacyBudget> train_budget,
                             Ledger* ledger, size_t total_clients = 0,
                             Neighboring neighboring = Neighboring::kAddRemove);

}  // namespace fedsyn

#endif  // FEDSYN_FEDTRAIN_H_
