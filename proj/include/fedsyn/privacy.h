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

#ifndef FEDSYN_PRIVACY_H_
#define FEDSYN_PRIVACY_H_

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/random.h"
#include "json.hpp"

namespace fedsyn {

class PrivacyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// (epsilon, delta) for one release. An infinite epsilon marks a non-private
// release: calibration returns sigma = 0 and nothing is charged.
struct PrivacyBudget {
  double epsilon = 0.0;
  double delta = 0.0;

  static PrivacyBudget NonPrivate() {
    return {std::numeric_limits<double>::infinity(), 0.0};
  }
  bool is_private() const { return std::isfinite(epsilon); }

  // Throws PrivacyError unless epsilon > 0 and 0 < delta < 1 (or non-private).
  void Validate() const;

  bool operator==(const PrivacyBudget&) const = default;
};

// Neighboring relation for sample-level DP. Add/remove gives per-sample L2
// sensitivity 1 for counts; replacement doubles the squared norm.
enum class Neighboring { kAddRemove, kReplace };

std::string_view NeighboringName(Neighboring n);
Neighboring ParseNeighboring(std::string_view s);

// L2 sensitivity of a release where one sample contributes `units` unit
// increments to distinct coordinates.
double CountSensitivity(size_t units, Neighboring n);

// Standard normal CDF.
double NormalCdf(double x);

// Phi(D/(2s) - e*s/D) - exp(e) * Phi(-D/(2s) - e*s/D). The analytic Gaussian
// mechanism with noise s is (e, d)-DP iff this is <= d.
double AnalyticGaussianDelta(double epsilon, double sigma, double sensitivity);

// Smallest sigma whose privacy profile is <= budget.delta, found by bisection
// in log-space over [1e-6, 1e6] * sensitivity. Returns 0 for non-private
// budgets.
double CalibrateAnalyticGaussian(const PrivacyBudget& budget,
                                 double sensitivity);

// v + N(0, sigma^2 I). sigma == 0 returns v and leaves rng untouched.
std::vector<double> AddGaussianNoise(std::vector<double> v, double sigma,
                                     Rng& rng);

enum class Phase { kTrain, kProfile, kVote };

std::string_view PhaseName(Phase p);
Phase ParsePhase(std::string_view s);

struct BudgetSplit {
  Capacity role = Capacity::kWeak;
  std::optional<PrivacyBudget> train;
  PrivacyBudget prof;
  std::optional<PrivacyBudget> vote;

  // Sum over present components.
  PrivacyBudget Total() const;
};

// Fraction of the client total given to training (strong) or voting (weak).
// Known totals use the exact table entries; anything else falls back to
// `main_fraction`.
struct SplitPolicy {
  std::map<double, std::pair<double, double>> table = {{8.0, {6.0, 2.0}},
                                                       {4.0, {3.0, 1.0}}};
  double main_fraction = 0.75;
};

// Per-phase delta = 1 / (2 N ln N).
double ComponentDelta(size_t n_clients);

BudgetSplit SplitBudget(double total_epsilon, Capacity role, size_t n_clients,
                        const SplitPolicy& policy = {});

struct LedgerEntry {
  size_t client_id = 0;
  Phase phase = Phase::kProfile;
  PrivacyBudget budget;
  double sensitivity = 0.0;
  // Noise standard deviation applied per release.
  double sigma = 0.0;
  // Number of identical releases composing into `budget` (DP-SGD steps).
  size_t releases = 1;

  bool operator==(const LedgerEntry&) const = default;
  nlohmann::json ToJson() const;
  static LedgerEntry FromJson(const nlohmann::json& j);
};

// Basic composition: epsilons and deltas add.
PrivacyBudget Compose(const std::vector<LedgerEntry>& entries);

// Uniform per-step budget under basic composition over rounds * local_iters
// steps.
PrivacyBudget PerStepTrainingBudget(const PrivacyBudget& train, size_t rounds,
                                    size_t local_iters);

// Append-only record of every private release in a run. Appends may come
// from several threads.
class Ledger {
 public:
  Ledger() = default;
  Ledger(const Ledger& other);
  Ledger& operator=(const Ledger& other);

  void Append(LedgerEntry entry);
  std::vector<LedgerEntry> Entries() const;
  std::vector<LedgerEntry> EntriesFor(size_t client_id) const;
  PrivacyBudget TotalFor(size_t client_id) const;

  nlohmann::json ToJson() const;
  static Ledger FromJson(const nlohmann::json& j);

 private:
  mutable std::mutex mu_;
  std::vector<LedgerEntry> entries_;
};

}  // namespace fedsyn

#endif  // FEDSYN_PRIVACY_H_
