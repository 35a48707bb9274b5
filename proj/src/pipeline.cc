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

#include "fedsyn/pipeline.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <type_traits>

#include "fedsyn/random.h"

namespace fedsyn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view ParticipantSetName(ParticipantSet s) {
  switch (s) {
    case ParticipantSet::kAll:
      return "all";
    case ParticipantSet::kStrong:
      return "strong";
    case ParticipantSet::kWeak:
      return "weak";
  }
  return "all";
}

ParticipantSet ParseParticipantSet(std::string_view s) {
  if (s == "all") return ParticipantSet::kAll;
  if (s == "strong") return ParticipantSet::kStrong;
  if (s == "weak") return ParticipantSet::kWeak;
  throw std::invalid_argument("unknown participant set " + std::string(s));
}

namespace {

json OptionalString(const std::optional<std::string>& s) {
  return s ? json(*s) : json(nullptr);
}

std::optional<std::string> ReadOptionalString(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

json EpsilonJson(double eps) {
  return std::isinf(eps) ? json("inf") : json(eps);
}

double ReadEpsilon(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity") {
      return std::numeric_limits<double>::infinity();
    }
    return std::stod(s);
  }
  return j.get<double>();
}

bool Covers(ParticipantSet set, Capacity c) {
  return set == ParticipantSet::kAll ||
         (set == ParticipantSet::kStrong) == (c == Capacity::kStrong);
}

}  // namespace

void RunConfig::Validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("invalid config: " + msg);
  };
  if (version != kConfigVersion) fail("unsupported version");
  if (n_clients < 2) fail("n_clients must be at least 2");
  if (!(strong_fraction > 0.0 && strong_fraction <= 1.0)) {
    fail("strong_fraction must lie in (0, 1]");
  }
  if (strong_codes && strong_codes->empty()) fail("strong_codes is empty");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (synthetic_count == 0) fail("synthetic_count must be positive");
  if (max_length < 2) fail("max_length must be at least 2");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (k == 0) fail("k must be at least 1");
  if (!(rate > 0.0 && rate <= 1.0)) fail("rate must lie in (0, 1]");
  if (embedding_dim == 0 || !std::has_single_bit(embedding_dim)) {
    fail("embedding_dim must be a power of two");
  }
  if (bandwidth && !(*bandwidth > 0.0)) fail("bandwidth must be positive");
  const bool jsonl = corpus.train_path.has_value();
  if (jsonl) {
    if (!corpus.reference_path || !corpus.test_path) {
      fail("JSON-Lines corpora need train, reference and test paths");
    }
    if (corpus.labels.size() < 2) fail("JSON-Lines corpora need >= 2 labels");
  } else if (corpus.n_documents < n_clients) {
    fail("fewer documents than clients");
  }
  if (corpus.reference_size == 0 || corpus.test_size == 0) {
    fail("held-out sets must be nonempty");
  }
  // With a spec file the code count is only known after loading it.
  if (strong_codes && (jsonl || !corpus.spec_path)) {
    const size_t n_codes =
        jsonl ? corpus.labels.size() : corpus.recipe.num_codes;
    if (*strong_codes->rbegin() >= n_codes) {
      fail("strong_codes must be a subset of the code set");
    }
  }
  try {
    train.Validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

json RunConfig::ToJson() const {
  json j;
  j["version"] = version;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["corpus"] = {{"train_path", OptionalString(corpus.train_path)},
                 {"reference_path", OptionalString(corpus.reference_path)},
                 {"test_path", OptionalString(corpus.test_path)},
                 {"labels", corpus.labels},
                 {"spec_path", OptionalString(corpus.spec_path)},
                 {"recipe", corpus.recipe.ToJson()},
                 {"n_documents", corpus.n_documents},
                 {"reference_size", corpus.reference_size},
                 {"test_size", corpus.test_size}};
  j["partition"] = {
      {"n_clients", n_clients},
      {"strong_fraction", strong_fraction},
      {"strong_codes", strong_codes ? json(*strong_codes) : json(nullptr)}};
  j["pretrained"] = {{"checkpoint", OptionalString(pretrained.checkpoint)},
                     {"shift", pretrained.shift},
                     {"fit_documents", pretrained.fit_documents},
                     {"smoothing", pretrained.smoothing}};
  j["train"] = train.ToJson();
  j["privacy"] = {{"epsilon", EpsilonJson(epsilon)},
                  {"neighboring", NeighboringName(neighboring)},
                  {"non_private_training", non_private_training}};
  j["profiling"] = {{"clients", ParticipantSetName(profile_clients)}};
  j["generation"] = {{"synthetic_count", synthetic_count},
                     {"max_length", max_length},
                     {"temperature", temperature}};
  j["refine"] = {{"k", k},
                 {"rate", rate},
                 {"uniform", uniform},
                 {"audit", audit},
                 {"voters", ParticipantSetName(voters)}};
  j["eval"] = {{"embedding_dim", embedding_dim},
               {"bandwidth", bandwidth ? json(*bandwidth) : json(nullptr)},
               {"classifier", classifier.ToJson()}};
  return j;
}

RunConfig RunConfig::FromJson(const json& j) {
  RunConfig c;
  try {
    c.version = j.value("version", kConfigVersion);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("corpus")) {
      const auto& k = j.at("corpus");
      c.corpus.train_path = ReadOptionalString(k, "train_path");
      c.corpus.reference_path = ReadOptionalString(k, "reference_path");
      c.corpus.test_path = ReadOptionalString(k, "test_path");
      c.corpus.labels = k.value("labels", c.corpus.labels);
      c.corpus.spec_path = ReadOptionalString(k, "spec_path");
      if (k.contains("recipe")) {
        c.corpus.recipe = SpecRecipe::FromJson(k.at("recipe"));
      }
      c.corpus.n_documents = k.value("n_documents", c.corpus.n_documents);
      c.corpus.reference_size =
          k.value("reference_size", c.corpus.reference_size);
      c.corpus.test_size = k.value("test_size", c.corpus.test_size);
    }
    if (j.contains("partition")) {
      const auto& p = j.at("partition");
      c.n_clients = p.value("n_clients", c.n_clients);
      c.strong_fraction = p.value("strong_fraction", c.strong_fraction);
      if (p.contains("strong_codes") && !p.at("strong_codes").is_null()) {
        c.strong_codes = p.at("strong_codes").get<std::set<size_t>>();
      }
    }
    if (j.contains("pretrained")) {
      const auto& p = j.at("pretrained");
      c.pretrained.checkpoint = ReadOptionalString(p, "checkpoint");
      c.pretrained.shift = p.value("shift", c.pretrained.shift);
      c.pretrained.fit_documents =
          p.value("fit_documents", c.pretrained.fit_documents);
      c.pretrained.smoothing = p.value("smoothing", c.pretrained.smoothing);
    }
    if (j.contains("train")) c.train = TrainConfig::FromJson(j.at("train"));
    if (j.contains("privacy")) {
      const auto& p = j.at("privacy");
      if (p.contains("epsilon")) c.epsilon = ReadEpsilon(p.at("epsilon"));
      if (p.contains("neighboring")) {
        c.neighboring = ParseNeighboring(p.at("neighboring").get<std::string>());
      }
      c.non_private_training =
          p.value("non_private_training", c.non_private_training);
    }
    if (j.contains("profiling")) {
      c.profile_clients = ParseParticipantSet(
          j.at("profiling").value("clients", std::string("all")));
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      c.synthetic_count = g.value("synthetic_count", c.synthetic_count);
      c.max_length = g.value("max_length", c.max_length);
      c.temperature = g.value("temperature", c.temperature);
    }
    if (j.contains("refine")) {
      const auto& r = j.at("refine");
      c.k = r.value("k", c.k);
      c.rate = r.value("rate", c.rate);
      c.uniform = r.value("uniform", c.uniform);
      c.audit = r.value("audit", c.audit);
      c.voters = ParseParticipantSet(r.value("voters", std::string("weak")));
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.embedding_dim = e.value("embedding_dim", c.embedding_dim);
      if (e.contains("bandwidth") && !e.at("bandwidth").is_null()) {
        c.bandwidth = e.at("bandwidth").get<double>();
      }
      if (e.contains("classifier")) {
        c.classifier = ClassifierOptions::FromJson(e.at("classifier"));
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  return c;
}

std::string RunConfig::Fingerprint() const {
  json j = ToJson();
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a(j.dump())));
  return buf;
}

RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() +
                                " is not valid JSON: " + e.what());
  }
  return RunConfig::FromJson(j);
}

void SaveRunConfig(const fs::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << cfg.ToJson().dump(2) << '\n';
}

// ---- In-memory stages -----------------------------------------------------

DataBundle PrepareData(const RunConfig& cfg) {
  cfg.Validate();
  DataBundle data;
  if (cfg.corpus.train_path) {
    data.codes = CodeSet(cfg.corpus.labels);
    data.train = LoadCorpus(*cfg.corpus.train_path, data.codes, cfg.max_length);
    data.reference =
        LoadCorpus(*cfg.corpus.reference_path, data.codes, cfg.max_length);
    data.test = LoadCorpus(*cfg.corpus.test_path, data.codes, cfg.max_length);
    if (data.train.empty() || data.reference.empty() || data.test.empty()) {
      throw CorpusError("corpus files must be nonempty");
    }
    return data;
  }
  if (cfg.corpus.spec_path) {
    std::ifstream in(*cfg.corpus.spec_path);
    if (!in) throw CorpusError("cannot open spec " + *cfg.corpus.spec_path);
    data.spec = CorpusSpec::FromJson(json::parse(in));
  } else {
    data.spec = BuildSpec(cfg.corpus.recipe);
  }
  data.codes = CodeSet(data.spec->labels);
  data.train = SynthesizeGroundTruth(*data.spec, cfg.corpus.n_documents,
                                     DeriveSeed(cfg.seed, "corpus", 0));
  data.reference = SynthesizeGroundTruth(*data.spec, cfg.corpus.reference_size,
                                         DeriveSeed(cfg.seed, "corpus", 1));
  data.test = SynthesizeGroundTruth(*data.spec, cfg.corpus.test_size,
                                    DeriveSeed(cfg.seed, "corpus", 2));
  return data;
}

std::vector<ClientDataset> PartitionClients(const RunConfig& cfg,
                                            const DataBundle& data) {
  const uint64_t seed = DeriveSeed(cfg.seed, "partition");
  if (cfg.strong_codes) {
    return PartitionNonIid(data.train, cfg.n_clients, cfg.strong_fraction,
                           *cfg.strong_codes, data.codes.size(), seed);
  }
  return PartitionIid(data.train, cfg.n_clients, cfg.strong_fraction, seed);
}

ModelParams PretrainedModel(const RunConfig& cfg, const DataBundle& data) {
  const size_t v = tokenizer::kVocabSize;
  if (cfg.pretrained.checkpoint) {
    ModelParams params = LoadCheckpoint(*cfg.pretrained.checkpoint);
    if (params.num_codes() != data.codes.size() || params.vocab_size() != v) {
      throw CorpusError("pretrained checkpoint shape does not match corpus");
    }
    return params;
  }
  if (!data.spec) return ModelParams(data.codes.size(), v);
  const uint64_t world = cfg.corpus.recipe.seed;
  const CorpusSpec shifted =
      ShiftSpec(*data.spec, cfg.corpus.recipe, cfg.pretrained.shift,
                DeriveSeed(world, "shift"));
  const auto docs =
      SynthesizeGroundTruth(shifted, cfg.pretrained.fit_documents,
                            DeriveSeed(world, "pretrain-corpus"));
  return FitSmoothedBigram(docs, data.codes.size(), v,
                           cfg.pretrained.smoothing);
}

namespace {

BudgetSplit ClientSplit(const RunConfig& cfg, Capacity role) {
  return SplitBudget(cfg.epsilon, role, cfg.n_clients);
}

}  // namespace

FinetuneResult FinetuneStage(const RunConfig& cfg, const ModelParams& init,
                             const std::vector<ClientDataset>& clients,
                             Ledger* ledger) {
  std::vector<ClientDataset> strong;
  for (const auto& c : clients) {
    if (c.capacity == Capacity::kStrong) strong.push_back(c);
  }
  TrainConfig train = cfg.train;
  train.seed = DeriveSeed(cfg.seed, "finetune", cfg.train.seed);
  std::optional<PrivacyBudget> budget =
      cfg.non_private_training ? PrivacyBudget::NonPrivate()
                               : *ClientSplit(cfg, Capacity::kStrong).train;
  return RunFinetuning(init, strong, train, budget, ledger, cfg.n_clients,
                       cfg.neighboring);
}

GenerateResult GenerateStage(const RunConfig& cfg, const ModelParams& model,
                             const std::vector<ClientDataset>& clients,
                             size_t num_codes, Ledger* ledger) {
  GenerateResult out;
  std::vector<const ClientDataset*> order;
  for (const auto& c : clients) {
    if (Covers(cfg.profile_clients, c.capacity)) order.push_back(&c);
  }
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->client_id < b->client_id;
  });
  for (const auto* c : order) {
    const ProfileVector exact = Profile(c->documents, num_codes);
    Rng rng = MakeRng(cfg.seed, "profile", c->client_id);
    out.profile_client_ids.push_back(c->client_id);
    out.noisy_profiles.push_back(DpProfile(exact,
                                           ClientSplit(cfg, c->capacity).prof,
                                           c->client_id, ledger, rng,
                                           cfg.neighboring));
  }
  out.global_profile = AggregateProfiles(out.noisy_profiles);
  if (out.global_profile.size() == 0) {
    out.global_profile.values.assign(num_codes, 0.0);
  }
  out.allocation = Allocate(out.global_profile, cfg.synthetic_count);
  Rng rng = MakeRng(cfg.seed, "generate");
  SamplingOptions sampling;
  sampling.max_length = cfg.max_length;
  sampling.temperature = cfg.temperature;
  out.synthetic = GenerateSynthetic(model, out.allocation.counts, sampling, rng);
  return out;
}

RefineResult RefineStage(const RunConfig& cfg, const SyntheticDataset& synthetic,
                         const std::vector<ClientDataset>& clients,
                         Ledger* ledger) {
  std::vector<ClientDataset> voters;
  std::vector<PrivacyBudget> budgets;
  for (const auto& c : clients) {
    if (!Covers(cfg.voters, c.capacity)) continue;
    voters.push_back(c);
    // Strong voters (all-clients mode) spend a weak client's vote budget on
    // top of their own split; the ledger shows the overspend.
    budgets.push_back(*ClientSplit(cfg, Capacity::kWeak).vote);
  }
  RefineOptions options;
  options.k = cfg.k;
  options.rate = cfg.rate;
  options.uniform = cfg.uniform;
  options.audit = cfg.audit;
  options.embedding_dim = cfg.embedding_dim;
  options.neighboring = cfg.neighboring;
  options.seed = DeriveSeed(cfg.seed, "refine");
  RefineResult result = Refine(synthetic, voters, budgets, options, ledger);
  if (result.skipped > 0) {
    std::cerr << "warning: " << result.skipped
              << " local examples had no same-code synthetic candidate\n";
  }
  return result;
}

double EvalBandwidth(const RunConfig& cfg, const DataBundle& data,
                     const std::vector<Document>& pool) {
  if (cfg.bandwidth) return *cfg.bandwidth;
  std::vector<EmbeddingVector> points = EmbedAll(data.reference, cfg.embedding_dim);
  for (const auto& d : pool) points.push_back(Embed(d, cfg.embedding_dim));
  const double h = MedianPairwiseDistance(points);
  return h > 0.0 ? h : 1.0;
}

MetricsReport EvaluateSet(const RunConfig& cfg, const std::string& label,
                          const std::vector<Document>& synthetic,
                          const DataBundle& data, double bandwidth) {
  MetricsReport r;
  r.label = label;
  r.size = synthetic.size();
  r.seed = cfg.seed;
  r.config_fingerprint = cfg.Fingerprint();
  r.bandwidth = bandwidth;
  r.mmd = Mmd(EmbedAll(synthetic, cfg.embedding_dim),
              EmbedAll(data.reference, cfg.embedding_dim), bandwidth);
  r.code_tv = CodeHistogramTv(synthetic, data.reference, data.codes.size());
  ClassifierOptions options = cfg.classifier;
  options.seed = DeriveSeed(cfg.seed, "eval", cfg.classifier.seed);
  const Classifier clf = TrainClassifier(synthetic, data.codes.size(),
                                         tokenizer::kVocabSize, options);
  const ClassificationScores scores = Evaluate(clf, data.test);
  r.downstream_accuracy = scores.accuracy;
  r.downstream_macro_f1 = scores.macro_f1;
  return r;
}

EvalResult EvalStage(const RunConfig& cfg, const DataBundle& data,
                     const SyntheticDataset& unrefined,
                     const SyntheticDataset& refined) {
  const auto unrefined_docs = unrefined.Documents();
  const double h = EvalBandwidth(cfg, data, unrefined_docs);
  return {EvaluateSet(cfg, "unrefined", unrefined_docs, data, h),
          EvaluateSet(cfg, "refined", refined.Documents(), data, h)};
}

json EvalResult::ToJson() const {
  return {{"unrefined", unrefined.ToJson()},
          {"refined", refined.ToJson()},
          {"comparison",
           {{"mmd_delta", refined.mmd - unrefined.mmd},
            {"code_tv_delta", refined.code_tv - unrefined.code_tv},
            {"accuracy_delta",
             refined.downstream_accuracy - unrefined.downstream_accuracy},
            {"macro_f1_delta",
             refined.downstream_macro_f1 - unrefined.downstream_macro_f1}}}};
}

// ---- On-disk artifacts ----------------------------------------------------

namespace {

void EnsureParent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void RequireFile(const fs::path& p) {
  if (!fs::exists(p)) {
    throw CorpusError("missing upstream artifact " + p.string());
  }
}

std::ofstream OpenOut(const fs::path& p) {
  EnsureParent(p);
  std::ofstream out(p);
  if (!out) throw CorpusError("cannot write " + p.string());
  return out;
}

json DocumentRecord(const Document& d, const CodeSet& codes) {
  return {{"text", tokenizer::Decode(d.tokens)},
          {"code", codes[d.code].label},
          {"tokens", d.tokens}};
}

Document ParseDocumentRecord(const json& j, const CodeSet& codes) {
  const auto label = j.at("code").get<std::string>();
  auto code = codes.Find(label);
  if (!code) throw CorpusError("unknown code " + label);
  Document d;
  d.code = *code;
  if (j.contains("tokens")) {
    d.tokens = j.at("tokens").get<std::vector<Token>>();
  } else {
    d.tokens = tokenizer::Encode(j.at("text").get<std::string>());
  }
  return d;
}

template <typename Fn>
void ForEachJsonLine(const fs::path& path, Fn&& fn) {
  RequireFile(path);
  std::ifstream in(path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw CorpusError(path.string() + ": line " + std::to_string(line_no) +
                        ": " + e.what());
    }
  }
}

void WriteDocuments(const fs::path& path, const std::vector<Document>& docs,
                    const CodeSet& codes) {
  auto out = OpenOut(path);
  for (const auto& d : docs) out << DocumentRecord(d, codes).dump() << '\n';
}

std::vector<Document> ReadDocuments(const fs::path& path, const CodeSet& codes) {
  std::vector<Document> docs;
  ForEachJsonLine(path, [&](const json& j) {
    docs.push_back(ParseDocumentRecord(j, codes));
  });
  return docs;
}

CodeSet CodesFor(const RunConfig& cfg, const ArtifactLayout& layout) {
  if (cfg.corpus.train_path) return CodeSet(cfg.corpus.labels);
  RequireFile(layout.corpus_spec());
  std::ifstream in(layout.corpus_spec());
  return CodeSet(json::parse(in).at("labels").get<std::vector<std::string>>());
}

DataBundle LoadData(const RunConfig& cfg, const ArtifactLayout& layout) {
  DataBundle data;
  data.codes = CodesFor(cfg, layout);
  if (!cfg.corpus.train_path) {
    std::ifstream in(layout.corpus_spec());
    data.spec = CorpusSpec::FromJson(json::parse(in));
  }
  data.train = ReadDocuments(layout.train_corpus(), data.codes);
  data.reference = ReadDocuments(layout.reference_corpus(), data.codes);
  data.test = ReadDocuments(layout.test_corpus(), data.codes);
  return data;
}

void WritePartition(const fs::path& path,
                    const std::vector<ClientDataset>& clients,
                    const CodeSet& codes) {
  auto out = OpenOut(path);
  for (const auto& c : clients) {
    for (const auto& d : c.documents) {
      json rec = DocumentRecord(d, codes);
      rec["client_id"] = c.client_id;
      rec["capacity"] = CapacityName(c.capacity);
      out << rec.dump() << '\n';
    }
  }
}

std::vector<ClientDataset> ReadPartition(const fs::path& path,
                                         const CodeSet& codes) {
  std::map<size_t, ClientDataset> by_id;
  ForEachJsonLine(path, [&](const json& j) {
    const auto id = j.at("client_id").get<size_t>();
    auto& c = by_id[id];
    c.client_id = id;
    c.capacity = j.at("capacity").get<std::string>() == "strong"
                     ? Capacity::kStrong
                     : Capacity::kWeak;
    c.documents.push_back(ParseDocumentRecord(j, codes));
  });
  std::vector<ClientDataset> clients;
  for (auto& [id, c] : by_id) clients.push_back(std::move(c));
  return clients;
}

// Replaces the ledger entries of `phase` with `fresh`.
void UpdateLedger(const ArtifactLayout& layout, Phase phase,
                  const Ledger& fresh) {
  Ledger merged;
  if (fs::exists(layout.ledger())) {
    std::ifstream in(layout.ledger());
    for (const auto& e : Ledger::FromJson(json::parse(in)).Entries()) {
      if (e.phase != phase) merged.Append(e);
    }
  }
  for (const auto& e : fresh.Entries()) merged.Append(e);
  auto out = OpenOut(layout.ledger());
  out << merged.ToJson().dump(2) << '\n';
}

// A successful rerun of the stage that left the marker clears it.
void ClearMarkerFor(const fs::path& marker, const std::string& stage) {
  std::ifstream in(marker);
  std::string line;
  if (!in || !std::getline(in, line)) return;
  in.close();
  if (line.rfind(stage + ": ", 0) == 0) fs::remove(marker);
}

template <typename Fn>
auto WithStage(const RunConfig& cfg, const std::string& stage, Fn&& fn) {
  const fs::path marker = ArtifactLayout{cfg.output_dir}.failure_marker();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      ClearMarkerFor(marker, stage);
    } else {
      auto result = fn();
      ClearMarkerFor(marker, stage);
      return result;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::create_directories(marker.parent_path(), ec);
    std::ofstream out(marker);
    out << stage << ": " << e.what() << '\n';
    throw StageError(stage, e.what());
  }
}

}  // namespace

void WriteSynthetic(const fs::path& path, const SyntheticDataset& ds,
                    const CodeSet& codes, bool audit) {
  auto out = OpenOut(path);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    json rec = DocumentRecord(s.AsDocument(), codes);
    rec["log_prob"] = s.log_prob;
    if (i < ds.votes.size()) rec["vote"] = ds.votes[i];
    if (audit && i < ds.raw_votes.size()) {
      rec["raw_vote"] = ds.raw_votes[i];
      rec["non_private_audit"] = true;
    }
    out << rec.dump() << '\n';
  }
}

SyntheticDataset ReadSynthetic(const fs::path& path, const CodeSet& codes) {
  SyntheticDataset ds;
  ds.num_codes = codes.size();
  ForEachJsonLine(path, [&](const json& j) {
    const Document d = ParseDocumentRecord(j, codes);
    ds.samples.push_back({d.tokens, d.code, j.value("log_prob", 0.0)});
    if (j.contains("vote")) ds.votes.push_back(j.at("vote").get<double>());
    if (j.contains("raw_vote")) {
      ds.raw_votes.push_back(j.at("raw_vote").get<double>());
    }
  });
  ds.ReindexCodes();
  return ds;
}

void RunGenCorpus(const RunConfig& cfg) {
  WithStage(cfg, "gen-corpus", [&] {
    const ArtifactLayout layout{cfg.output_dir};
    fs::create_directories(layout.root);
    fs::remove(layout.failure_marker());
    fs::remove(layout.ledger());
    SaveRunConfig(layout.config(), cfg);
    const DataBundle data = PrepareData(cfg);
    if (data.spec) {
      auto out = OpenOut(layout.corpus_spec());
      out << data.spec->ToJson().dump() << '\n';
    }
    WriteDocuments(layout.train_corpus(), data.train, data.codes);
    WriteDocuments(layout.reference_corpus(), data.reference, data.codes);
    WriteDocuments(layout.test_corpus(), data.test, data.codes);
  });
}

void RunPartition(const RunConfig& cfg) {
  WithStage(cfg, "partition", [&] {
    const ArtifactLayout layout{cfg.output_dir};
    const DataBundle data = LoadData(cfg, layout);
    WritePartition(layout.partition(), PartitionClients(cfg, data), data.codes);
  });
}

void RunFinetune(const RunConfig& cfg) {
  WithStage(cfg, "finetune", [&] {
    const ArtifactLayout layout{cfg.output_dir};
    const DataBundle data = LoadData(cfg, layout);
    const auto clients = ReadPartition(layout.partition(), data.codes);
    const ModelParams init = PretrainedModel(cfg, data);
    EnsureParent(layout.pretrained());
    SaveCheckpoint(layout.pretrained(), init);
    Ledger ledger;
    const FinetuneResult result = FinetuneStage(cfg, init, clients, &ledger);
    SaveCheckpoint(layout.finetuned(), result.params);
    auto log = OpenOut(layout.train_log());
    for (const auto& r : result.rounds) {
      json rec = r.ToJson();
      rec["noise_multiplier"] = result.noise_multiplier;
      log << rec.dump() << '\n';
    }
    UpdateLedger(layout, Phase::kTrain, ledger);
  });
}

void RunGenerate(const RunConfig& cfg) {
  WithStage(cfg, "generate", [&] {
    const ArtifactLayout layout{cfg.output_dir};
    const CodeSet codes = CodesFor(cfg, layout);
    const auto clients = ReadPartition(layout.partition(), codes);
    RequireFile(layout.finetuned());
    const ModelParams model = LoadCheckpoint(layout.finetuned());
    Ledger ledger;
    const GenerateResult gen =
        GenerateStage(cfg, model, clients, codes.size(), &ledger);
    json profiles;
    profiles["client_ids"] = gen.profile_client_ids;
    profiles["noisy"] = json::array();
    for (const auto& p : gen.noisy_profiles) {
      profiles["noisy"].push_back(ProfileToJson(p));
    }
    profiles["global"] = ProfileToJson(gen.global_profile);
    profiles["allocation"] = gen.allocation.counts;
    auto out = OpenOut(layout.profiles());
    out << profiles.dump(2) << '\n';
    WriteSynthetic(layout.unrefined(), gen.synthetic, codes, false);
    UpdateLedger(layout, Phase::kProfile, ledger);
  });
}

void RunRefine(const RunConfig& cfg) {
  WithStage(cfg, "refine", [&] {
    const ArtifactLayout layout{cfg.output_dir};
    const CodeSet codes = CodesFor(cfg, layout);
    const auto clients = ReadPartition(layout.partition(), codes);
    const SyntheticDataset unrefined = ReadSynthetic(layout.unrefined(), codes);
    Ledger ledger;
    const RefineResult result = RefineStage(cfg, unrefined, clients, &ledger);
    WriteSynthetic(layout.refined(), result.refined, codes, cfg.audit);
    UpdateLedger(layout, Phase::kVote, ledger);
  });
}

EvalResult RunEval(const RunConfig& cfg) {
  return WithStage(cfg, "eval", [&] {
    const ArtifactLayout layout{cfg.output_dir};
    const DataBundle data = LoadData(cfg, layout);
    const SyntheticDataset unrefined =
        ReadSynthetic(layout.unrefined(), data.codes);
    const SyntheticDataset refined = ReadSynthetic(layout.refined(), data.codes);
    EvalResult result = EvalStage(cfg, data, unrefined, refined);
    json bundle = result.ToJson();
    if (fs::exists(layout.profiles())) {
      std::ifstream in(layout.profiles());
      const json profiles = json::parse(in);
      bundle["global_profile"] = profiles.at("global");
      bundle["allocation"] = profiles.at("allocation");
    }
    auto out = OpenOut(layout.metrics());
    out << bundle.dump(2) << '\n';
    return result;
  });
}

EvalResult RunPipeline(const RunConfig& cfg) {
  WithStage(cfg, "config", [&] { cfg.Validate(); });
  RunGenCorpus(cfg);
  RunPartition(cfg);
  RunFinetune(cfg);
  RunGenerate(cfg);
  RunRefine(cfg);
  return RunEval(cfg);
}

}  // namespace fedsyn
