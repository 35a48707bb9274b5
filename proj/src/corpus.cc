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

#include "fedsyn/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fedsyn/random.h"

namespace fedsyn {
namespace tokenizer {

Token CharToken(char c) {
  auto u = static_cast<unsigned char>(c);
  if (u < 0x20 || u > 0x7e) return kUnk;
  return kFirstChar + static_cast<Token>(u - 0x20);
}

char TokenChar(Token t) {
  if (t < kFirstChar || t >= kVocabSize) return '\0';
  return static_cast<char>(0x20 + (t - kFirstChar));
}

std::vector<Token> Encode(std::string_view text, size_t max_length) {
  if (max_length < 2) throw CorpusError("max_length must be at least 2");
  std::vector<Token> out;
  out.push_back(kBos);
  const size_t max_chars = max_length - 2;
  size_t i = 0;
  while (i < text.size() && out.size() - 1 < max_chars) {
    auto b = static_cast<unsigned char>(text[i]);
    if (b < 0x80) {
      out.push_back(CharToken(text[i]));
      ++i;
      continue;
    }
    size_t len = 1;
    if ((b & 0xe0) == 0xc0) len = 2;
    else if ((b & 0xf0) == 0xe0) len = 3;
    else if ((b & 0xf8) == 0xf0) len = 4;
    i = std::min(text.size(), i + len);
    out.push_back(kUnk);
  }
  out.push_back(kEos);
  return out;
}

std::string Decode(const std::vector<Token>& tokens) {
  std::string out;
  for (Token t : tokens) {
    if (t == kUnk) {
      out += "\xef\xbf\xbd";
    } else if (char c = TokenChar(t); c != '\0') {
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace tokenizer

CodeSet::CodeSet(std::vector<std::string> labels) {
  codes_.reserve(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw CorpusError("control code label is empty");
    for (size_t j = 0; j < i; ++j) {
      if (codes_[j].label == labels[i]) {
        throw CorpusError("duplicate control code " + labels[i]);
      }
    }
    codes_.push_back({i, std::move(labels[i])});
  }
}

std::vector<std::string> CodeSet::labels() const {
  std::vector<std::string> out;
  for (const auto& c : codes_) out.push_back(c.label);
  return out;
}

std::optional<size_t> CodeSet::Find(std::string_view label) const {
  for (const auto& c : codes_) {
    if (c.label == label) return c.index;
  }
  return std::nullopt;
}

std::string_view CapacityName(Capacity c) {
  return c == Capacity::kStrong ? "strong" : "weak";
}

void CorpusSpec::Validate() const {
  if (labels.empty()) throw CorpusError("corpus spec has no codes");
  if (vocab_size < 2) throw CorpusError("vocabulary too small");
  if (max_length < 2) throw CorpusError("max_length must be at least 2");
  if (mixture.size() != labels.size()) {
    throw CorpusError("mixture length does not match code count");
  }
  double total = 0.0;
  for (double w : mixture) {
    if (!(w >= 0.0)) throw CorpusError("negative mixture weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw CorpusError("mixture weights sum to " + std::to_string(total));
  }
  if (transitions.size() != labels.size()) {
    throw CorpusError("transition table count does not match code count");
  }
  for (size_t c = 0; c < transitions.size(); ++c) {
    if (transitions[c].size() != vocab_size * vocab_size) {
      throw CorpusError("transition table has wrong size");
    }
    for (size_t prev = 0; prev < vocab_size; ++prev) {
      double row = 0.0;
      for (size_t next = 0; next < vocab_size; ++next) {
        double p = transitions[c][prev * vocab_size + next];
        if (!(p >= 0.0)) throw CorpusError("negative transition probability");
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << "transition row (code " << c << ", token " << prev
            << ") sums to " << row;
        throw CorpusError(msg.str());
      }
    }
  }
}

nlohmann::json CorpusSpec::ToJson() const {
  nlohmann::json j;
  j["vocab_size"] = vocab_size;
  j["labels"] = labels;
  j["mixture"] = mixture;
  j["max_length"] = max_length;
  // Rows are stored sparsely as [next, probability] pairs.
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& table : transitions) {
    nlohmann::json rows = nlohmann::json::array();
    for (size_t prev = 0; prev < vocab_size; ++prev) {
      nlohmann::json row = nlohmann::json::array();
      for (size_t next = 0; next < vocab_size; ++next) {
        double p = table[prev * vocab_size + next];
        if (p != 0.0) row.push_back({next, p});
      }
      rows.push_back(std::move(row));
    }
    tables.push_back(std::move(rows));
  }
  j["transitions"] = std::move(tables);
  return j;
}

CorpusSpec CorpusSpec::FromJson(const nlohmann::json& j) {
  CorpusSpec spec;
  try {
    spec.vocab_size = j.at("vocab_size").get<size_t>();
    spec.labels = j.at("labels").get<std::vector<std::string>>();
    spec.mixture = j.at("mixture").get<std::vector<double>>();
    spec.max_length = j.value("max_length", tokenizer::kDefaultMaxLength);
    const auto& tables = j.at("transitions");
    for (const auto& rows : tables) {
      std::vector<double> table(spec.vocab_size * spec.vocab_size, 0.0);
      if (rows.size() != spec.vocab_size) {
        throw CorpusError("transition table must have vocab_size rows");
      }
      for (size_t prev = 0; prev < spec.vocab_size; ++prev) {
        for (const auto& entry : rows[prev]) {
          auto next = entry.at(0).get<size_t>();
          if (next >= spec.vocab_size) throw CorpusError("token out of range");
          table[prev * spec.vocab_size + next] = entry.at(1).get<double>();
        }
      }
      spec.transitions.push_back(std::move(table));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError(std::string("malformed corpus spec: ") + e.what());
  }
  spec.Validate();
  return spec;
}

nlohmann::json SpecRecipe::ToJson() const {
  return {{"num_codes", num_codes},
          {"alphabet", alphabet},
          {"mixture", mixture},
          {"concentration", concentration},
          {"code_specificity", code_specificity},
          {"mean_length", mean_length},
          {"max_length", max_length},
          {"seed", seed}};
}

SpecRecipe SpecRecipe::FromJson(const nlohmann::json& j) {
  SpecRecipe r;
  r.num_codes = j.value("num_codes", r.num_codes);
  r.alphabet = j.value("alphabet", r.alphabet);
  r.mixture = j.value("mixture", r.mixture);
  r.concentration = j.value("concentration", r.concentration);
  r.code_specificity = j.value("code_specificity", r.code_specificity);
  r.mean_length = j.value("mean_length", r.mean_length);
  r.max_length = j.value("max_length", r.max_length);
  r.seed = j.value("seed", r.seed);
  return r;
}

namespace {

std::vector<double> Dirichlet(size_t n, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> out(n);
  double total = 0.0;
  for (auto& x : out) {
    x = gamma(rng);
    total += x;
  }
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(n));
    return out;
  }
  for (auto& x : out) x /= total;
  return out;
}

std::vector<Token> AlphabetTokens(const std::string& alphabet) {
  std::vector<Token> out;
  for (char c : alphabet) {
    Token t = tokenizer::CharToken(c);
    if (t == tokenizer::kUnk) {
      throw CorpusError("alphabet contains a non-printable character");
    }
    if (std::find(out.begin(), out.end(), t) != out.end()) {
      throw CorpusError("alphabet contains a repeated character");
    }
    out.push_back(t);
  }
  if (out.empty()) throw CorpusError("alphabet is empty");
  return out;
}

}  // namespace

CorpusSpec BuildSpec(const SpecRecipe& recipe) {
  if (recipe.num_codes == 0) throw CorpusError("recipe needs at least one code");
  if (recipe.mean_length < 1.0) throw CorpusError("mean_length must be >= 1");
  if (recipe.code_specificity < 0.0 || recipe.code_specificity > 1.0) {
    throw CorpusError("code_specificity must lie in [0, 1]");
  }
  const std::vector<Token> alphabet = AlphabetTokens(recipe.alphabet);
  const size_t v = tokenizer::kVocabSize;
  const size_t a = alphabet.size();
  const double p_eos = 1.0 / recipe.mean_length;

  CorpusSpec spec;
  spec.vocab_size = v;
  spec.max_length = recipe.max_length;
  for (size_t c = 0; c < recipe.num_codes; ++c) {
    spec.labels.push_back("c" + std::to_string(c));
  }
  if (recipe.mixture.empty()) {
    spec.mixture.assign(recipe.num_codes,
                        1.0 / static_cast<double>(recipe.num_codes));
  } else {
    if (recipe.mixture.size() != recipe.num_codes) {
      throw CorpusError("recipe mixture length does not match num_codes");
    }
    double total = std::accumulate(recipe.mixture.begin(),
                                   recipe.mixture.end(), 0.0);
    for (double w : recipe.mixture) spec.mixture.push_back(w / total);
  }

  Rng rng(recipe.seed);
  // Rows with a random distribution: BOS followed by every alphabet token.
  std::vector<Token> sources = {tokenizer::kBos};
  sources.insert(sources.end(), alphabet.begin(), alphabet.end());
  std::vector<std::vector<double>> base;
  for (size_t s = 0; s < sources.size(); ++s) {
    base.push_back(Dirichlet(a, recipe.concentration, rng));
  }

  spec.transitions.assign(recipe.num_codes, std::vector<double>(v * v, 0.0));
  for (size_t c = 0; c < recipe.num_codes; ++c) {
    auto& table = spec.transitions[c];
    for (size_t prev = 0; prev < v; ++prev) {
      table[prev * v + tokenizer::kEos] = 1.0;
    }
    for (size_t s = 0; s < sources.size(); ++s) {
      const Token prev = sources[s];
      std::vector<double> own = Dirichlet(a, recipe.concentration, rng);
      const double keep = prev == tokenizer::kBos ? 1.0 : 1.0 - p_eos;
      double* row = &table[prev * v];
      row[tokenizer::kEos] = prev == tokenizer::kBos ? 0.0 : p_eos;
      for (size_t k = 0; k < a; ++k) {
        row[alphabet[k]] =
            keep * ((1.0 - recipe.code_specificity) * base[s][k] +
                    recipe.code_specificity * own[k]);
      }
    }
  }
  spec.Validate();
  return spec;
}

CorpusSpec ShiftSpec(const CorpusSpec& spec, const SpecRecipe& recipe,
                     double magnitude, uint64_t seed) {
  if (magnitude < 0.0 || magnitude > 1.0) {
    throw CorpusError("shift magnitude must lie in [0, 1]");
  }
  SpecRecipe other_recipe = recipe;
  other_recipe.seed = seed;
  other_recipe.num_codes = spec.num_codes();
  other_recipe.mixture = spec.mixture;
  CorpusSpec other = BuildSpec(other_recipe);
  if (other.vocab_size != spec.vocab_size) {
    throw CorpusError("shifted spec vocabulary mismatch");
  }
  CorpusSpec out = spec;
  for (size_t c = 0; c < out.transitions.size(); ++c) {
    for (size_t i = 0; i < out.transitions[c].size(); ++i) {
      out.transitions[c][i] = (1.0 - magnitude) * spec.transitions[c][i] +
                              magnitude * other.transitions[c][i];
    }
  }
  out.Validate();
  return out;
}

std::vector<Document> LoadCorpus(const std::filesystem::path& path,
                                 const CodeSet& code_set, size_t max_length) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::vector<Document> docs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    std::string text, code;
    try {
      record = nlohmann::json::parse(line);
      text = record.at("text").get<std::string>();
      code = record.at("code").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path.string() + ": line " + std::to_string(line_no) +
                        ": malformed record: " + e.what());
    }
    auto index = code_set.Find(code);
    if (!index) {
      throw CorpusError("unknown code " + code + " (line " +
                        std::to_string(line_no) + ")");
    }
    docs.push_back({tokenizer::Encode(text, max_length), *index});
  }
  return docs;
}

void WriteCorpus(const std::filesystem::path& path,
                 const std::vector<Document>& docs, const CodeSet& code_set) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& d : docs) {
    nlohmann::json record = {{"text", tokenizer::Decode(d.tokens)},
                             {"code", code_set[d.code].label}};
    out << record.dump() << '\n';
  }
}

std::vector<Document> SynthesizeGroundTruth(const CorpusSpec& spec, size_t n,
                                            uint64_t seed) {
  if (n == 0) throw CorpusError("cannot synthesize an empty corpus");
  spec.Validate();
  Rng rng(seed);
  const size_t v = spec.vocab_size;
  std::vector<Document> docs;
  docs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Document doc;
    doc.code = SampleCategorical(spec.mixture, rng);
    doc.tokens.push_back(tokenizer::kBos);
    const auto& table = spec.transitions[doc.code];
    while (doc.tokens.back() != tokenizer::kEos) {
      if (doc.tokens.size() + 1 >= spec.max_length) {
        doc.tokens.push_back(tokenizer::kEos);
        break;
      }
      const Token prev = doc.tokens.back();
      std::span<const double> row(&table[prev * v], v);
      doc.tokens.push_back(static_cast<Token>(SampleCategorical(row, rng)));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

size_t StrongClientCount(size_t n_clients, double strong_fraction) {
  if (!(strong_fraction > 0.0 && strong_fraction <= 1.0)) {
    throw CorpusError("strong_fraction must lie in (0, 1]");
  }
  double raw = strong_fraction * static_cast<double>(n_clients);
  auto m = static_cast<size_t>(std::ceil(raw - 1e-9));
  return std::clamp<size_t>(m, 1, n_clients);
}

namespace {

std::vector<size_t> ShuffledIndices(size_t n, uint64_t seed) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<ClientDataset> EmptyClients(size_t n_clients, size_t n_strong) {
  std::vector<ClientDataset> clients(n_clients);
  for (size_t i = 0; i < n_clients; ++i) {
    clients[i].client_id = i;
    clients[i].capacity = i < n_strong ? Capacity::kStrong : Capacity::kWeak;
  }
  return clients;
}

void CheckNonEmpty(const std::vector<ClientDataset>& clients) {
  for (const auto& c : clients) {
    if (c.documents.empty()) {
      throw CorpusError("client " + std::to_string(c.client_id) +
                        " received no documents");
    }
  }
}

}  // namespace

std::vector<ClientDataset> PartitionIid(const std::vector<Document>& corpus,
                                        size_t n_clients,
                                        double strong_fraction, uint64_t seed) {
  if (n_clients == 0) throw CorpusError("n_clients must be positive");
  if (n_clients > corpus.size()) {
    throw CorpusError("more clients than documents");
  }
  auto clients =
      EmptyClients(n_clients, StrongClientCount(n_clients, strong_fraction));
  const auto order = ShuffledIndices(corpus.size(), seed);
  for (size_t k = 0; k < order.size(); ++k) {
    clients[k % n_clients].documents.push_back(corpus[order[k]]);
  }
  return clients;
}

std::vector<ClientDataset> PartitionNonIid(const std::vector<Document>& corpus,
                                           size_t n_clients,
                                           double strong_fraction,
                                           const std::set<size_t>& strong_codes,
                                           size_t num_codes, uint64_t seed) {
  if (n_clients == 0) throw CorpusError("n_clients must be positive");
  if (n_clients > corpus.size()) {
    throw CorpusError("more clients than documents");
  }
  if (strong_codes.empty()) throw CorpusError("strong_codes is empty");
  if (*strong_codes.rbegin() >= num_codes) {
    throw CorpusError("strong_codes is not a subset of the code set");
  }
  const size_t n_strong = StrongClientCount(n_clients, strong_fraction);
  auto clients = EmptyClients(n_clients, n_strong);

  const auto order = ShuffledIndices(corpus.size(), seed);
  std::vector<size_t> pool, rest;
  for (size_t idx : order) {
    (strong_codes.contains(corpus[idx].code) ? pool : rest).push_back(idx);
  }
  if (pool.empty()) throw CorpusError("no document matches strong_codes");

  // Strong clients take the share round-robin dealing would give them, drawn
  // from the matching pool only.
  const size_t n = corpus.size();
  size_t quota = 0;
  for (size_t i = 0; i < n_strong; ++i) {
    quota += n / n_clients + (i < n % n_clients ? 1 : 0);
  }
  const size_t taken = std::min(quota, pool.size());
  for (size_t k = 0; k < taken; ++k) {
    clients[k % n_strong].documents.push_back(corpus[pool[k]]);
  }
  rest.insert(rest.end(), pool.begin() + static_cast<ptrdiff_t>(taken),
              pool.end());
  // Keep the remainder in shuffled order so weak clients see a uniform mix.
  std::vector<size_t> rank(n);
  for (size_t k = 0; k < n; ++k) rank[order[k]] = k;
  std::sort(rest.begin(), rest.end(),
            [&](size_t a, size_t b) { return rank[a] < rank[b]; });
  const size_t n_weak = n_clients - n_strong;
  if (n_weak == 0 && !rest.empty()) {
    throw CorpusError(
        "documents outside strong_codes remain but there are no weak clients");
  }
  for (size_t k = 0; k < rest.size(); ++k) {
    clients[n_strong + k % n_weak].documents.push_back(corpus[rest[k]]);
  }
  CheckNonEmpty(clients);
  return clients;
}

ProfileVector Profile(const std::vector<Document>& docs, size_t num_codes) {
  ProfileVector p;
  p.values.assign(num_codes, 0.0);
  for (const auto& d : docs) {
    if (d.code >= num_codes) throw CorpusError("document code out of range");
    p.values[d.code] += 1.0;
  }
  return p;
}

ProfileVector Profile(const ClientDataset& ds, const CodeSet& code_set) {
  return Profile(ds.documents, code_set.size());
}

}  // namespace fedsyn
