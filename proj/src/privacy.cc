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

#include "fedsyn/privacy.h"

#include <algorithm>
#include <cmath>
#include <random>

namespace fedsyn {

void PrivacyBudget::Validate() const {
  if (!is_private()) {
    if (epsilon < 0.0) throw PrivacyError("epsilon must be positive");
    return;
  }
  if (!(epsilon > 0.0)) throw PrivacyError("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw PrivacyError("delta must lie in (0, 1)");
  }
}

std::string_view NeighboringName(Neighboring n) {
  return n == Neighboring::kAddRemove ? "add_remove" : "replace";
}

Neighboring ParseNeighboring(std::string_view s) {
  if (s == "add_remove") return Neighboring::kAddRemove;
  if (s == "replace") return Neighboring::kReplace;
  throw PrivacyError("unknown neighboring relation " + std::string(s));
}

double CountSensitivity(size_t units, Neighboring n) {
  const double base = std::sqrt(static_cast<double>(units));
  return n == Neighboring::kAddRemove ? base : std::sqrt(2.0) * base;
}

double NormalCdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double AnalyticGaussianDelta(double epsilon, double sigma,
                             double sensitivity) {
  const double a = sensitivity / (2.0 * sigma);
  const double b = epsilon * sigma / sensitivity;
  const double lower = NormalCdf(-a - b);
  // exp(eps) * Phi(.) evaluated in log-space to survive large epsilon.
  const double second = lower > 0.0 ? std::exp(epsilon + std::log(lower)) : 0.0;
  return NormalCdf(a - b) - second;
}

double CalibrateAnalyticGaussian(const PrivacyBudget& budget,
                                 double sensitivity) {
  budget.Validate();
  if (!(sensitivity > 0.0)) throw PrivacyError("sensitivity must be positive");
  if (!budget.is_private()) return 0.0;

  auto feasible = [&](double s) {
    return AnalyticGaussianDelta(budget.epsilon, s, sensitivity) <=
           budget.delta;
  };
  double lo = 1e-6 * sensitivity;
  double hi = 1e6 * sensitivity;
  if (feasible(lo)) return lo;
  if (!feasible(hi)) {
    throw PrivacyError("analytic Gaussian calibration: upper bracket infeasible");
  }
  constexpr int kMaxIterations = 200;
  for (int it = 0; it < kMaxIterations; ++it) {
    if (hi / lo - 1.0 < 1e-14) return hi;
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) return hi;
    (feasible(mid) ? hi : lo) = mid;
  }
  throw PrivacyError("analytic Gaussian calibration did not converge");
}

std::vector<double> AddGaussianNoise(std::vector<double> v, double sigma,
                                     Rng& rng) {
  if (sigma < 0.0) throw PrivacyError("sigma must be nonnegative");
  if (sigma == 0.0) return v;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& x : v) x += noise(rng);
  return v;
}

std::string_view PhaseName(Phase p) {
  switch (p) {
    case Phase::kTrain:
      return "train";
    case Phase::kProfile:
      return "profile";
    case Phase::kVote:
      return "vote";
  }
  return "unknown";
}

Phase ParsePhase(std::string_view s) {
  if (s == "train") return Phase::kTrain;
  if (s == "profile") return Phase::kProfile;
  if (s == "vote") return Phase::kVote;
  throw PrivacyError("unknown phase " + std::string(s));
}

PrivacyBudget BudgetSplit::Total() const {
  PrivacyBudget total{prof.epsilon, prof.delta};
  for (const auto& part : {train, vote}) {
    if (!part) continue;
    total.epsilon += part->epsilon;
    total.delta += part->delta;
  }
  return total;
}

double ComponentDelta(size_t n_clients) {
  if (n_clients < 2) {
    throw PrivacyError("delta = 1/(2 N ln N) needs at least two clients");
  }
  const double n = static_cast<double>(n_clients);
  return 1.0 / (2.0 * n * std::log(n));
}

BudgetSplit SplitBudget(double total_epsilon, Capacity role, size_t n_clients,
                        const SplitPolicy& policy) {
  const double delta = ComponentDelta(n_clients);
  BudgetSplit split;
  split.role = role;
  if (std::isinf(total_epsilon) && total_epsilon > 0.0) {
    split.prof = PrivacyBudget::NonPrivate();
    (role == Capacity::kStrong ? split.train : split.vote) =
        PrivacyBudget::NonPrivate();
    return split;
  }
  if (!(total_epsilon > 0.0)) throw PrivacyError("epsilon must be positive");

  double main_eps, prof_eps;
  if (auto it = policy.table.find(total_epsilon); it != policy.table.end()) {
    std::tie(main_eps, prof_eps) = it->second;
  } else {
    main_eps = total_epsilon * policy.main_fraction;
    prof_eps = total_epsilon - main_eps;
  }
  split.prof = {prof_eps, delta};
  (role == Capacity::kStrong ? split.train : split.vote) =
      PrivacyBudget{main_eps, delta};
  return split;
}

nlohmann::json LedgerEntry::ToJson() const {
  auto eps = [](double e) -> nlohmann::json {
    if (std::isinf(e)) return "inf";
    return e;
  };
  return {{"client_id", client_id},
          {"phase", PhaseName(phase)},
          {"epsilon", eps(budget.epsilon)},
          {"delta", budget.delta},
          {"sensitivity", sensitivity},
          {"sigma", sigma},
          {"releases", releases}};
}

LedgerEntry LedgerEntry::FromJson(const nlohmann::json& j) {
  LedgerEntry e;
  e.client_id = j.at("client_id").get<size_t>();
  e.phase = ParsePhase(j.at("phase").get<std::string>());
  const auto& eps = j.at("epsilon");
  e.budget.epsilon = eps.is_string() ? std::numeric_limits<double>::infinity()
                                     : eps.get<double>();
  e.budget.delta = j.at("delta").get<double>();
  e.sensitivity = j.at("sensitivity").get<double>();
  e.sigma = j.at("sigma").get<double>();
  e.releases = j.value("releases", size_t{1});
  return e;
}

PrivacyBudget Compose(const std::vector<LedgerEntry>& entries) {
  PrivacyBudget total{0.0, 0.0};
  for (const auto& e : entries) {
    total.epsilon += e.budget.epsilon;
    total.delta += e.budget.delta;
  }
  return total;
}

PrivacyBudget PerStepTrainingBudget(const PrivacyBudget& train, size_t rounds,
                                    size_t local_iters) {
  if (rounds == 0 || local_iters == 0) {
    throw PrivacyError("rounds and local_iters must be at least 1");
  }
  if (!train.is_private()) return train;
  const double steps = static_cast<double>(rounds * local_iters);
  return {train.epsilon / steps, train.delta / steps};
}

Ledger::Ledger(const Ledger& other) : entries_(other.Entries()) {}

Ledger& Ledger::operator=(const Ledger& other) {
  if (this != &other) {
    auto copy = other.Entries();
    std::lock_guard<std::mutex> lock(mu_);
    entries_ = std::move(copy);
  }
  return *this;
}

void Ledger::Append(LedgerEntry entry) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_.push_back(std::move(entry));
}

std::vector<LedgerEntry> Ledger::Entries() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_;
}

std::vector<LedgerEntry> Ledger::EntriesFor(size_t client_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<LedgerEntry> out;
  std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
               [&](const LedgerEntry& e) { return e.client_id == client_id; });
  return out;
}

PrivacyBudget Ledger::TotalFor(size_t client_id) const {
  return Compose(EntriesFor(client_id));
}

nlohmann::json Ledger::ToJson() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : Entries()) arr.push_back(e.ToJson());
  return arr;
}

Ledger Ledger::FromJson(const nlohmann::json& j) {
  Ledger ledger;
  for (const auto& e : j) ledger.Append(LedgerEntry::FromJson(e));
  return ledger;
}

}  // namespace fedsyn
