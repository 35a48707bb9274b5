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

#include "fedsyn/profiling.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsyn {

ProfileVector DpProfile(const ProfileVector& p, const PrivacyBudget& budget,
                        size_t client_id, Ledger* ledger, Rng& rng,
                        Neighboring neighboring) {
  for (double x : p.values) {
    if (x < 0.0 || x != std::floor(x)) {
      throw std::invalid_argument("profile entries must be count-valued");
    }
  }
  const double sensitivity = CountSensitivity(1, neighboring);
  const double sigma = CalibrateAnalyticGaussian(budget, sensitivity);
  if (budget.is_private() && ledger) {
    ledger->Append({client_id, Phase::kProfile, budget, sensitivity, sigma, 1});
  }
  return {AddGaussianNoise(p.values, sigma, rng)};
}

ProfileVector AggregateProfiles(const std::vector<ProfileVector>& profiles) {
  if (profiles.empty()) return {};
  ProfileVector total;
  total.values.assign(profiles.front().size(), 0.0);
  for (const auto& p : profiles) {
    if (p.size() != total.size()) {
      throw std::invalid_argument("profile length mismatch");
    }
    for (size_t j = 0; j < p.size(); ++j) total.values[j] += p.values[j];
  }
  return total;
}

Allocation Allocate(const ProfileVector& global, size_t s) {
  if (s == 0) throw std::invalid_argument("allocation total must be >= 1");
  const size_t n = global.size();
  if (n == 0) throw std::invalid_argument("empty profile");
  std::vector<double> weights(n);
  for (size_t j = 0; j < n; ++j) {
    weights[j] = std::max(0.0, global.values[j]);
    if (std::isnan(global.values[j])) weights[j] = 0.0;
  }
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) {
    std::fill(weights.begin(), weights.end(), 1.0);
    total = static_cast<double>(n);
  }

  Allocation out;
  out.total = s;
  out.counts.assign(n, 0);
  std::vector<double> remainder(n);
  size_t assigned = 0;
  for (size_t j = 0; j < n; ++j) {
    const double quota = static_cast<double>(s) * (weights[j] / total);
    const double base = std::floor(quota);
    out.counts[j] = static_cast<size_t>(base);
    remainder[j] = quota - base;
    assigned += out.counts[j];
  }
  // Floating error can push the floors one past s in degenerate cases.
  while (assigned > s) {
    auto j = static_cast<size_t>(
        std::max_element(out.counts.begin(), out.counts.end()) -
        out.counts.begin());
    --out.counts[j];
    --assigned;
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return remainder[a] > remainder[b];
  });
  for (size_t k = 0; assigned < s; k = (k + 1) % n) {
    ++out.counts[order[k]];
    ++assigned;
  }
  return out;
}

nlohmann::json ProfileToJson(const ProfileVector& p) { return p.values; }

ProfileVector ProfileFromJson(const nlohmann::json& j) {
  return {j.get<std::vector<double>>()};
}

}  // namespace fedsyn
