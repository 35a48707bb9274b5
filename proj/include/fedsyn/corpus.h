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

#ifndef FEDSYN_CORPUS_H_
#define FEDSYN_CORPUS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fedsyn {

using Token = uint32_t;

// Byte-level tokenizer over printable ASCII with three sentinels.
//
//   0 = BOS, 1 = EOS, 2 = UNK, 3 + (c - 0x20) for c in [0x20, 0x7e].
namespace tokenizer {
inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kUnk = 2;
inline constexpr Token kFirstChar = 3;
inline constexpr size_t kVocabSize = 3 + 95;
inline constexpr size_t kDefaultMaxLength = 64;

Token CharToken(char c);
// Returns '\0' for sentinels.
char TokenChar(Token t);

// Produces [BOS, chars..., EOS]. Each UTF-8 code point outside printable
// ASCII becomes a single UNK. Texts longer than max_length - 2 characters are
// truncated so the result never exceeds max_length tokens.
std::vector<Token> Encode(std::string_view text,
                          size_t max_length = kDefaultMaxLength);

// Sentinels are dropped except UNK, which renders as U+FFFD.
std::string Decode(const std::vector<Token>& tokens);
}  // namespace tokenizer

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ControlCode {
  size_t index = 0;
  std::string label;

  bool operator==(const ControlCode&) const = default;
};

// Shared, non-private conditioning vocabulary. Indices are contiguous.
class CodeSet {
 public:
  CodeSet() = default;
  explicit CodeSet(std::vector<std::string> labels);

  size_t size() const { return codes_.size(); }
  const ControlCode& operator[](size_t i) const { return codes_.at(i); }
  const std::vector<ControlCode>& codes() const { return codes_; }
  std::vector<std::string> labels() const;

  std::optional<size_t> Find(std::string_view label) const;

  bool operator==(const CodeSet&) const = default;

 private:
  std::vector<ControlCode> codes_;
};

struct Document {
  std::vector<Token> tokens;
  size_t code = 0;

  bool operator==(const Document&) const = default;
  auto operator<=>(const Document&) const = default;
};

enum class Capacity { kStrong, kWeak };

std::string_view CapacityName(Capacity c);

struct ClientDataset {
  size_t client_id = 0;
  std::vector<Document> documents;
  Capacity capacity = Capacity::kWeak;
};

// Per-code document counts, real-valued once noise has been added.
struct ProfileVector {
  std::vector<double> values;

  size_t size() const { return values.size(); }
  bool operator==(const ProfileVector&) const = default;
};

// Ground-truth generative description of a corpus: each code owns a
// row-stochastic token transition table, documents start at BOS and follow
// the chain until EOS.
struct CorpusSpec {
  size_t vocab_size = tokenizer::kVocabSize;
  std::vector<std::string> labels;
  std::vector<double> mixture;
  // transitions[code][prev * vocab_size + next].
  std::vector<std::vector<double>> transitions;
  // Documents that reach max_length - 1 tokens are closed with EOS.
  size_t max_length = tokenizer::kDefaultMaxLength;

  size_t num_codes() const { return labels.size(); }
  double Transition(size_t code, Token prev, Token next) const {
    return transitions[code][prev * vocab_size + next];
  }

  // Throws CorpusError naming the first violated invariant.
  void Validate() const;

  nlohmann::json ToJson() const;
  static CorpusSpec FromJson(const nlohmann::json& j);
};

// Compact recipe for a random CorpusSpec over a small character alphabet.
// Each code's rows blend a shared base distribution with a code-specific one,
// so `code_specificity` controls how separable the codes are.
struct SpecRecipe {
  size_t num_codes = 5;
  std::string alphabet = "abcdefghijklmnop ";
  std::vector<double> mixture;  // empty means uniform
  double concentration = 0.3;
  double code_specificity = 0.9;
  double mean_length = 20.0;
  size_t max_length = tokenizer::kDefaultMaxLength;
  uint64_t seed = 7;

  bool operator==(const SpecRecipe&) const = default;
  nlohmann::json ToJson() const;
  static SpecRecipe FromJson(const nlohmann::json& j);
};

CorpusSpec BuildSpec(const SpecRecipe& recipe);

// Blends every row of `spec` with an independent random spec built from the
// same recipe shape: rows = (1 - magnitude) * spec + magnitude * other.
CorpusSpec ShiftSpec(const CorpusSpec& spec, const SpecRecipe& recipe,
                     double magnitude, uint64_t seed);

std::vector<Document> LoadCorpus(const std::filesystem::path& path,
                                 const CodeSet& code_set,
                                 size_t max_length = tokenizer::kDefaultMaxLength);

// Writes {"text", "code"} records readable by LoadCorpus.
void WriteCorpus(const std::filesystem::path& path,
                 const std::vector<Document>& docs, const CodeSet& code_set);

std::vector<Document> SynthesizeGroundTruth(const CorpusSpec& spec, size_t n,
                                            uint64_t seed);

std::vector<ClientDataset> PartitionIid(const std::vector<Document>& corpus,
                                        size_t n_clients,
                                        double strong_fraction, uint64_t seed);

std::vector<ClientDataset> PartitionNonIid(const std::vector<Document>& corpus,
                                           size_t n_clients,
                                           double strong_fraction,
                                           const std::set<size_t>& strong_codes,
                                           size_t num_codes, uint64_t seed);

// ceil(strong_fraction * n_clients), guarded against representation error.
size_t StrongClientCount(size_t n_clients, double strong_fraction);

ProfileVector Profile(const ClientDataset& ds, const CodeSet& code_set);
ProfileVector Profile(const std::vector<Document>& docs, size_t num_codes);

}  // namespace fedsyn

#endif  // FEDSYN_CORPUS_H_
