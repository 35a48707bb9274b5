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

#ifndef FEDSYN_PROFILING_H_
#define FEDSYN_PROFILING_H_

#include <cstddef>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/privacy.h"
#include "fedsyn/random.h"
#include "json.hpp"

namespace fedsyn {

struct Allocation {
  std::vector<size_t> counts;
  size_t total = 0;

  bool operator==(const Allocation&) const = default;
};

// Gaussian-perturbed profile, sigma calibrated for count sensitivity 1
// (sqrt(2) under replacement). Appends a Profile ledger entry for private
// budgets. Noisy entries may be negative.
ProfileVector DpProfile(const ProfileVector& p, const PrivacyBudget& budget,
                        size_t client_id, Ledger* ledger, Rng& rng,
                        Neighboring neighboring = Neighboring::kAddRemove);

// Coordinate-wise sum; throws std::invalid_argument on length mismatch.
ProfileVector AggregateProfiles(const std::vector<ProfileVector>& profiles);

// Clamps negatives to zero, normalizes to proportions and apportions s by
// largest remainder (ties to the lower code). An all-zero profile yields a
// uniform allocation.
Allocation Allocate(const ProfileVector& global, size_t s);

nlohmann::json ProfileToJson(const ProfileVector& p);
ProfileVector ProfileFromJson(const nlohmann::json& j);

}  // namespace fedsyn

#endif  // FEDSYN_PROFILING_H_
