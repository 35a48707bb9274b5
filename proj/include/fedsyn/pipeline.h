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

#ifndef FEDSYN_PIPELINE_H_
#define FEDSYN_PIPELINE_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsyn/corpus.h"
#include "fedsyn/eval.h"
#include "fedsyn/fedtrain.h"
#include "fedsyn/generator.h"
#include "fedsyn/privacy.h"
#include "fedsyn/profiling.h"
#include "fedsyn/refine.h"
#include "json.hpp"

namespace fedsyn {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kOutputDirEnv = "FEDSYN_OUTPUT_DIR";

enum class ParticipantSet { kAll, kStrong, kWeak };

std::string_view ParticipantSetName(ParticipantSet s);
ParticipantSet ParseParticipantSet(std::string_view s);

struct CorpusSource {
  // JSON-Lines mode: all three paths plus the code labels.
  std::optional<std::string> train_path;
  std::optional<std::string> reference_path;
  std::optional<std::string> test_path;
  std::vector<std::string> labels;
  // Ground-truth mode: an explicit CorpusSpec file, else `recipe`.
  std::optional<std::string> spec_path;
  SpecRecipe recipe;
  size_t n_documents = 4000;
  size_t reference_size = 1000;
  size_t test_size = 1000;

  bool operator==(const CorpusSource&) const = default;
};

struct PretrainedSource {
  std::optional<std::string> checkpoint;
  // Ground-truth mode without a checkpoint: smoothed bigram fit on documents
  // from a spec shifted by `shift` toward an unrelated random spec.
  double shift = 0.7;
  size_t fit_documents = 2000;
  double smoothing = 0.1;

  bool operator==(const PretrainedSource&) const = default;
};

struct RunConfig {
  int version = kConfigVersion;
  CorpusSource corpus;
  size_t n_clients = 20;
  double strong_fraction = 0.1;
  std::optional<std::set<size_t>> strong_codes;
  PretrainedSource pretrained;
  TrainConfig train;
  // Per-client total epsilon; +infinity disables every mechanism.
  double epsilon = 8.0;
  Neighboring neighboring = Neighboring::kAddRemove;
  // Train without noise and without a Train ledger entry.
  bool non_private_training = false;
  ParticipantSet profile_clients = ParticipantSet::kAll;
  ParticipantSet voters = ParticipantSet::kWeak;
  size_t synthetic_count = 10000;
  size_t max_length = tokenizer::kDefaultMaxLength;
  double temperature = 1.0;
  size_t k = 5;
  double rate = 0.2;
  bool uniform = false;
  bool audit = false;
  size_t embedding_dim = kDefaultEmbeddingDim;
  std::optional<double> bandwidth;
  ClassifierOptions classifier;
  uint64_t seed = 1;
  std::string output_dir = "fedsyn_out";

  // Throws std::invalid_argument on inconsistent settings.
  void Validate() const;

  bool operator==(const RunConfig&) const = default;
  nlohmann::json ToJson() const;
  static RunConfig FromJson(const nlohmann::json& j);

  // Hash of the serialized config without output_dir.
  std::string Fingerprint() const;
};

RunConfig LoadRunConfig(const std::filesystem::path& path);
void SaveRunConfig(const std::filesystem::path& path, const RunConfig& cfg);

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---- In-memory stages -----------------------------------------------------

struct DataBundle {
  CodeSet codes;
  std::optional<CorpusSpec> spec;
  std::vector<Document> train;
  std::vector<Document> reference;
  std::vector<Document> test;
};

DataBundle PrepareData(const RunConfig& cfg);

std::vector<ClientDataset> PartitionClients(const RunConfig& cfg,
                                            const DataBundle& data);

ModelParams PretrainedModel(const RunConfig& cfg, const DataBundle& data);

FinetuneResult FinetuneStage(const RunConfig& cfg, const ModelParams& init,
                             const std::vector<ClientDataset>& clients,
                             Ledger* ledger);

struct GenerateResult {
  std::vector<size_t> profile_client_ids;
  std::vector<ProfileVector> noisy_profiles;
  ProfileVector global_profile;
  Allocation allocation;
  SyntheticDataset synthetic;
};

GenerateResult GenerateStage(const RunConfig& cfg, const ModelParams& model,
                             const std::vector<ClientDataset>& clients,
                             size_t num_codes, Ledger* ledger);

RefineResult RefineStage(const RunConfig& cfg, const SyntheticDataset& synthetic,
                         const std::vector<ClientDataset>& clients,
                         Ledger* ledger);

struct EvalResult {
  MetricsReport unrefined;
  MetricsReport refined;
  nlohmann::json ToJson() const;
};

MetricsReport EvaluateSet(const RunConfig& cfg, const std::string& label,
                          const std::vector<Document>& synthetic,
                          const DataBundle& data, double bandwidth);

// Median-heuristic bandwidth over reference plus `pool`, unless the config
// pins one.
double EvalBandwidth(const RunConfig& cfg, const DataBundle& data,
                     const std::vector<Document>& pool);

EvalResult EvalStage(const RunConfig& cfg, const DataBundle& data,
                     const SyntheticDataset& unrefined,
                     const SyntheticDataset& refined);

// ---- On-disk artifacts ----------------------------------------------------

struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path corpus_dir() const { return root / "corpus"; }
  std::filesystem::path train_corpus() const { return corpus_dir() / "train.jsonl"; }
  std::filesystem::path reference_corpus() const { return corpus_dir() / "reference.jsonl"; }
  std::filesystem::path test_corpus() const { return corpus_dir() / "test.jsonl"; }
  std::filesystem::path corpus_spec() const { return corpus_dir() / "spec.json"; }
  std::filesystem::path partition() const { return root / "partition.jsonl"; }
  std::filesystem::path pretrained() const { return root / "model" / "pretrained.ckpt"; }
  std::filesystem::path finetuned() const { return root / "model" / "finetuned.ckpt"; }
  std::filesystem::path train_log() const { return root / "model" / "train_log.jsonl"; }
  std::filesystem::path profiles() const { return root / "profiles.json"; }
  std::filesystem::path unrefined() const { return root / "synthetic" / "unrefined.jsonl"; }
  std::filesystem::path refined() const { return root / "synthetic" / "refined.jsonl"; }
  std::filesystem::path ledger() const { return root / "ledger.json"; }
  std::filesystem::path metrics() const { return root / "metrics.json"; }
  std::filesystem::path failure_marker() const { return root / "FAILED"; }
};

// Token-preserving JSONL for synthetic sets: text, code label, tokens,
// log_prob and any attached votes.
void WriteSynthetic(const std::filesystem::path& path,
                    const SyntheticDataset& ds, const CodeSet& codes,
                    bool audit);
SyntheticDataset ReadSynthetic(const std::filesystem::path& path,
                               const CodeSet& codes);

// Subcommands. Each reads its upstream artifacts from cfg.output_dir,
// failing with a StageError that names a missing file.
void RunGenCorpus(const RunConfig& cfg);
void RunPartition(const RunConfig& cfg);
void RunFinetune(const RunConfig& cfg);
void RunGenerate(const RunConfig& cfg);
void RunRefine(const RunConfig& cfg);
EvalResult RunEval(const RunConfig& cfg);

// All stages in order. On failure a FAILED marker naming the stage is left
// in the output directory next to whatever artifacts were already written.
EvalResult RunPipeline(const RunConfig& cfg);

}  // namespace fedsyn

#endif  // FEDSYN_PIPELINE_H_
