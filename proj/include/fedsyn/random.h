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

#ifndef FEDSYN_RANDOM_H_
#define FEDSYN_RANDOM_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace fedsyn {

// All randomness flows through explicitly passed engines of this type.
using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t Fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stable per-(stage, index) seed derived from a master seed, so that stages
// and clients never share a random stream.
constexpr uint64_t DeriveSeed(uint64_t master, std::string_view stage,
                              uint64_t index = 0, uint64_t sub = 0) {
  uint64_t h = Mix64(master ^ Fnv1a(stage));
  h = Mix64(h ^ Mix64(index + 0x632be59bd9b4e019ULL));
  return Mix64(h ^ Mix64(sub + 0x8cb92ba72f3d8dd7ULL));
}

inline Rng MakeRng(uint64_t master, std::string_view stage, uint64_t index = 0,
                   uint64_t sub = 0) {
  return Rng(DeriveSeed(master, stage, index, sub));
}

// Index drawn with probability proportional to weights[i]. Weights must be
// nonnegative with a positive sum. Consumes exactly one uniform draw.
inline size_t SampleCategorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng) * total;
  size_t last_positive = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last_positive;
}

}  // namespace fedsyn

#endif  // FEDSYN_RANDOM_H_
