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

#include "fedsyn/fedtrain.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedsyn {
namespace {

double Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double ScaledNorm(std::span<const double> v, double factor) {
  double s = 0.0;
  for (double x : v) s += (factor * x) * (factor * x);
  return std::sqrt(s);
}

// ClipFactor, nudged down until the scaled vector provably fits in the ball
// (c / ||g|| can overshoot by an ulp after rounding).
double SafeClipFactor(std::span<const double> v, double clip_norm) {
  double factor = ClipFactor(Norm(v), clip_norm);
  if (factor == 1.0) return factor;
  while (ScaledNorm(v, factor) > clip_norm) {
    factor = std::nextafter(factor, 0.0);
  }
  return factor;
}

}  // namespace

void TrainConfig::Validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
  if (!(local_lr >= 0.0) || !(server_lr >= 0.0)) {
    throw std::invalid_argument("learning rates must be nonnegative");
  }
  if (!(noise_multiplier >= 0.0)) {
    throw std::invalid_argument("noise_multiplier must be nonnegative");
  }
  if (noise_multiplier > 0.0 && std::isinf(clip_norm)) {
    throw std::invalid_argument("noise requires a finite clip_norm");
  }
}

nlohmann::json TrainConfig::ToJson() const {
  nlohmann::json clip = std::isinf(clip_norm) ? nlohmann::json("inf")
                                               : nlohmann::json(clip_norm);
  return {{"rounds", rounds},
          {"local_iters", local_iters},
          {"batch_size", batch_size},
          {"clip_norm", clip},
          {"local_lr", local_lr},
          {"server_lr", server_lr},
          {"noise_multiplier", noise_multiplier},
          {"seed", seed},
          {"denominator", denominator == AggregationDenominator::kParticipating
                              ? "participating"
                              : "all_clients"}};
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j) {
  TrainConfig c;
  c.rounds = j.value("rounds", c.rounds);
  c.local_iters = j.value("local_iters", c.local_iters);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("clip_norm")) {
    const auto& clip = j.at("clip_norm");
    c.clip_norm = clip.is_string() ? std::numeric_limits<double>::infinity()
                                   : clip.get<double>();
  }
  c.local_lr = j.value("local_lr", c.local_lr);
  c.server_lr = j.value("server_lr", c.server_lr);
  c.noise_multiplier = j.value("noise_multiplier", c.noise_multiplier);
  c.seed = j.value("seed", c.seed);
  const std::string denom = j.value("denominator", std::string("participating"));
  if (denom == "participating") {
    c.denominator = AggregationDenominator::kParticipating;
  } else if (denom == "all_clients") {
    c.denominator = AggregationDenominator::kAllClients;
  } else {
    throw std::invalid_argument("unknown aggregation denominator " + denom);
  }
  return c;
}

double ClipFactor(double norm, double clip_norm) {
  return 1.0 / std::max(1.0, norm / clip_norm);
}

std::vector<double> Clip(std::vector<double> g, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
  const double factor = SafeClipFactor(g, clip_norm);
  if (factor != 1.0) {
    for (auto& x : g) x *= factor;
  }
  return g;
}

void DpSgdStep(ModelParams& params, std::span<const Document> batch,
               const TrainConfig& cfg, Rng& rng, StepTrace* trace) {
  if (batch.empty()) throw std::invalid_argument("empty minibatch");
  std::vector<double> sum(params.size(), 0.0);
  for (const auto& doc : batch) {
    const SparseGradient g = SparseGradNegLogProb(params, doc);
    const double factor = SafeClipFactor(g.values, cfg.clip_norm);
    g.AddTo(sum, factor);
    if (trace) trace->clipped_norms.push_back(ScaledNorm(g.values, factor));
  }
  if (cfg.noise_multiplier > 0.0) {
    std::normal_distribution<double> noise(
        0.0, cfg.noise_multiplier * cfg.clip_norm);
    for (auto& x : sum) x += noise(rng);
    if (trace) ++trace->noise_draws;
  }
  const double b = static_cast<double>(batch.size());
  auto& theta = params.flat();
  for (size_t k = 0; k < theta.size(); ++k) {
    theta[k] -= cfg.local_lr * (sum[k] / b);
  }
}

MinibatchSchedule::MinibatchSchedule(size_t dataset_size, size_t batch_size,
                                     Rng& rng)
    : dataset_size_(dataset_size),
      batch_size_(std::min(batch_size, dataset_size)),
      rng_(rng) {
  if (dataset_size == 0) throw std::invalid_argument("empty client dataset");
  Reshuffle();
}

void MinibatchSchedule::Reshuffle() {
  order_.resize(dataset_size_);
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<size_t> MinibatchSchedule::Next() {
  if (cursor_ + batch_size_ > dataset_size_) Reshuffle();
  std::vector<size_t> batch(order_.begin() + static_cast<ptrdiff_t>(cursor_),
                            order_.begin() +
                                static_cast<ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return batch;
}

ClientUpdate LocalRound(const ModelParams& global, const ClientDataset& ds,
                        const TrainConfig& cfg, Rng& rng) {
  if (ds.capacity != Capacity::kStrong) {
    throw std::invalid_argument("only strong clients run local training");
  }
  cfg.Validate();
  ModelParams local = global;
  if (cfg.local_iters > 0) {
    MinibatchSchedule schedule(ds.documents.size(), cfg.batch_size, rng);
    std::vector<Document> batch;
    for (size_t step = 0; step < cfg.local_iters; ++step) {
      batch.clear();
      for (size_t idx : schedule.Next()) batch.push_back(ds.documents[idx]);
      DpSgdStep(local, batch, cfg, rng);
    }
  }
  ClientUpdate update;
  update.client_id = ds.client_id;
  update.delta.resize(global.size());
  for (size_t k = 0; k < global.size(); ++k) {
    update.delta[k] = local.flat()[k] - global.flat()[k];
  }
  update.local = std::move(local.flat());
  return update;
}

std::vector<double> Aggregate(const std::vector<ClientUpdate>& updates,
                              size_t denominator) {
  if (updates.empty()) throw std::invalid_argument("no client updates");
  if (denominator == 0) throw std::invalid_argument("zero denominator");
  std::vector<const ClientUpdate*> sorted;
  for (const auto& u : updates) sorted.push_back(&u);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ClientUpdate* a, const ClientUpdate* b) {
                     return a->client_id < b->client_id;
                   });
  const size_t dim = sorted.front()->delta.size();
  std::vector<double> sum(dim, 0.0);
  for (const auto* u : sorted) {
    if (u->delta.size() != dim) {
      throw std::invalid_argument("client updates differ in length");
    }
    for (size_t k = 0; k < dim; ++k) sum[k] += u->delta[k];
  }
  const double d = static_cast<double>(denominator);
  for (auto& x : sum) x /= d;
  return sum;
}

std::vector<double> Aggregate(const std::vector<ClientUpdate>& updates) {
  return Aggregate(updates, updates.size());
}

nlohmann::json RoundMetrics::ToJson() const {
  return {{"round", round},
          {"mean_delta_norm", mean_delta_norm},
          {"train_nll", train_nll}};
}

FinetuneResult RunFinetuning(const ModelParams& init,
                             const std::vector<ClientDataset>& strong,
                             const TrainConfig& cfg,
                             std::optional<PrivacyBudget> train_budget,
                             Ledger* ledger, size_t total_clients,
                             Neighboring neighboring) {
  if (strong.empty()) throw std::invalid_argument("no strong clients");
  cfg.Validate();

  TrainConfig run_cfg = cfg;
  const bool is_private = train_budget && train_budget->is_private();
  if (is_private) {
    if (std::isinf(cfg.clip_norm)) {
      throw std::invalid_argument("private training requires finite clip_norm");
    }
    const PrivacyBudget per_step =
        PerStepTrainingBudget(*train_budget, cfg.rounds, cfg.local_iters);
    // One sample moves the clipped sum by at most clip_norm (add/remove) or
    // 2 * clip_norm (replacement).
    const double sensitivity =
        (neighboring == Neighboring::kAddRemove ? 1.0 : 2.0) * cfg.clip_norm;
    const double sigma = CalibrateAnalyticGaussian(per_step, sensitivity);
    run_cfg.noise_multiplier = sigma / cfg.clip_norm;
    if (ledger) {
      for (const auto& client : strong) {
        ledger->Append({client.client_id, Phase::kTrain, *train_budget,
                        sensitivity, sigma, cfg.rounds * cfg.local_iters});
      }
    }
  } else if (train_budget) {
    run_cfg.noise_multiplier = 0.0;
  }

  std::vector<const ClientDataset*> order;
  for (const auto& c : strong) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(),
                   [](const ClientDataset* a, const ClientDataset* b) {
                     return a->client_id < b->client_id;
                   });

  size_t denominator = order.size();
  if (cfg.denominator == AggregationDenominator::kAllClients) {
    if (total_clients < order.size()) {
      throw std::invalid_argument("total_clients smaller than strong set");
    }
    denominator = total_clients;
  }
  const double weight = cfg.server_lr * static_cast<double>(order.size()) /
                        static_cast<double>(denominator);

  FinetuneResult result{init, run_cfg.noise_multiplier, {}};
  auto& theta = result.params.flat();
  for (size_t r = 1; r <= cfg.rounds; ++r) {
    std::vector<ClientUpdate> updates;
    for (const auto* client : order) {
      Rng rng = MakeRng(cfg.seed, "train", client->client_id, r);
      updates.push_back(LocalRound(result.params, *client, run_cfg, rng));
    }
    const std::vector<double> delta = Aggregate(updates, denominator);

    // theta + server_lr * delta, written as a convex blend with the mean
    // local model so that weight == 1 reproduces it exactly.
    std::vector<double> mean_local(theta.size(), 0.0);
    for (const auto& u : updates) {
      for (size_t k = 0; k < theta.size(); ++k) mean_local[k] += u.local[k];
    }
    const double m = static_cast<double>(updates.size());
    for (size_t k = 0; k < theta.size(); ++k) {
      theta[k] = (1.0 - weight) * theta[k] + weight * (mean_local[k] / m);
    }

    RoundMetrics metrics;
    metrics.round = r;
    metrics.mean_delta_norm = Norm(delta);
    double nll = 0.0;
    size_t docs = 0;
    for (const auto* client : order) {
      nll += MeanNll(result.params, client->documents) *
             static_cast<double>(client->documents.size());
      docs += client->documents.size();
    }
    metrics.train_nll = nll / static_cast<double>(docs);
    result.rounds.push_back(metrics);
  }
  return result;
}

}  // namespace fedsyn
