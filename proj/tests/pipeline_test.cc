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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fedsyn {
namespace {

namespace fs = std::filesystem;

RunConfig SmallConfig(const fs::path& out) {
  RunConfig c;
  c.corpus.n_documents = 600;
  c.corpus.reference_size = 150;
  c.corpus.test_size = 150;
  c.n_clients = 6;
  c.strong_fraction = 0.3;  // ceil(1.8) = 2 strong clients
  c.train.rounds = 1;
  c.train.local_iters = 2;
  c.train.batch_size = 32;
  c.synthetic_count = 250;
  c.classifier.epochs = 5;
  c.seed = 7;
  c.output_dir = out.string();
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("fedsyn_pipeline_" +
             std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  fs::path root_;
};

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path → bytes for every file except the config, which records the
// output directory.
std::map<std::string, std::string> Snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "config.json") continue;
    out[rel] = Slurp(e.path());
  }
  return out;
}

TEST(RunConfigTest, JsonRoundTrip) {
  RunConfig c = SmallConfig("x");
  c.strong_codes = std::set<size_t>{1, 3};
  c.epsilon = 4.0;
  c.uniform = true;
  c.audit = true;
  c.bandwidth = 0.4;
  c.profile_clients = ParticipantSet::kWeak;
  c.pretrained.checkpoint = "model.ckpt";
  EXPECT_EQ(RunConfig::FromJson(c.ToJson()), c);
  RunConfig inf = c;
  inf.epsilon = std::numeric_limits<double>::infinity();
  EXPECT_EQ(RunConfig::FromJson(nlohmann::json::parse(inf.ToJson().dump())), inf);
  EXPECT_EQ(RunConfig::FromJson(RunConfig{}.ToJson()), RunConfig{});
}

TEST(RunConfigTest, FingerprintIgnoresOutputDir) {
  RunConfig a = SmallConfig("a"), b = SmallConfig("b");
  EXPECT_EQ(a.Fingerprint(), b.Fingerprint());
  b.k = 3;
  EXPECT_NE(a.Fingerprint(), b.Fingerprint());
}

TEST(RunConfigTest, ValidationRejectsInconsistentSettings) {
  const RunConfig good = SmallConfig("x");
  EXPECT_NO_THROW(good.Validate());
  auto bad = [&good](auto mutate) {
    RunConfig c = good;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](RunConfig& c) { c.n_clients = 1; }).Validate(), std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.strong_fraction = 0.0; }).Validate(), std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.epsilon = 0.0; }).Validate(), std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.k = 0; }).Validate(), std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.rate = 1.5; }).Validate(), std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.embedding_dim = 100; }).Validate(), std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.strong_codes = std::set<size_t>{9}; }).Validate(),
               std::invalid_argument);
  EXPECT_THROW(bad([](RunConfig& c) { c.corpus.train_path = "a.jsonl"; }).Validate(),
               std::invalid_argument);
}

TEST_F(PipelineTest, ConfigFileRoundTrip) {
  const RunConfig c = SmallConfig(root_);
  SaveRunConfig(root_ / "cfg.json", c);
  EXPECT_EQ(LoadRunConfig(root_ / "cfg.json"), c);
}

TEST_F(PipelineTest, RunWritesEveryArtifact) {
  const RunConfig c = SmallConfig(root_);
  const EvalResult r = RunPipeline(c);
  const ArtifactLayout l{root_};
  for (const fs::path& p :
       {l.config(), l.train_corpus(), l.reference_corpus(), l.test_corpus(),
        l.corpus_spec(), l.partition(), l.pretrained(), l.finetuned(),
        l.train_log(), l.profiles(), l.unrefined(), l.refined(), l.ledger(),
        l.metrics()}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  EXPECT_FALSE(fs::exists(l.failure_marker()));
  const auto metrics = nlohmann::json::parse(Slurp(l.metrics()));
  EXPECT_TRUE(metrics.contains("unrefined"));
  EXPECT_TRUE(metrics.contains("refined"));
  EXPECT_TRUE(metrics.contains("comparison"));
  EXPECT_EQ(metrics["refined"]["config_fingerprint"], c.Fingerprint());
  EXPECT_EQ(r.unrefined.size, 250u);
  EXPECT_LT(r.refined.size, r.unrefined.size);
  EXPECT_NEAR(metrics["comparison"]["mmd_delta"].get<double>(),
              r.refined.mmd - r.unrefined.mmd, 1e-12);
}

TEST_F(PipelineTest, SameSeedIsByteIdentical) {
  RunPipeline(SmallConfig(root_ / "a"));
  RunPipeline(SmallConfig(root_ / "b"));
  const auto a = Snapshot(root_ / "a"), b = Snapshot(root_ / "b");
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [rel, bytes] : a) {
    ASSERT_TRUE(b.count(rel)) << rel;
    EXPECT_TRUE(bytes == b.at(rel)) << rel;
  }
  RunConfig other = SmallConfig(root_ / "c");
  other.seed = 8;
  RunPipeline(other);
  EXPECT_NE(Slurp(root_ / "a" / "metrics.json"), Slurp(root_ / "c" / "metrics.json"));
}

TEST_F(PipelineTest, ChainedSubcommandsMatchRun) {
  RunPipeline(SmallConfig(root_ / "run"));
  const RunConfig c = SmallConfig(root_ / "chain");
  RunGenCorpus(c);
  RunPartition(c);
  RunFinetune(c);
  RunGenerate(c);
  RunRefine(c);
  RunEval(c);
  EXPECT_EQ(Snapshot(root_ / "run"), Snapshot(root_ / "chain"));
}

TEST_F(PipelineTest, MissingUpstreamArtifactIsNamed) {
  const RunConfig c = SmallConfig(root_);
  RunGenCorpus(c);
  RunPartition(c);
  try {
    RunGenerate(c);
    FAIL() << "expected a StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "generate");
    EXPECT_NE(std::string(e.what()).find("finetuned.ckpt"), std::string::npos)
        << e.what();
  }
  const ArtifactLayout l{root_};
  ASSERT_TRUE(fs::exists(l.failure_marker()));
  EXPECT_NE(Slurp(l.failure_marker()).find("generate"), std::string::npos);
  EXPECT_TRUE(fs::exists(l.partition()));  // partial artifacts kept
}

TEST_F(PipelineTest, LedgerConservation) {
  RunConfig c = SmallConfig(root_);
  RunPipeline(c);
  const Ledger ledger =
      Ledger::FromJson(nlohmann::json::parse(Slurp(ArtifactLayout{root_}.ledger())));
  const auto clients = PartitionClients(c, PrepareData(c));
  const double delta = ComponentDelta(c.n_clients);
  size_t strong = 0;
  for (const auto& cl : clients) {
    const PrivacyBudget total = ledger.TotalFor(cl.client_id);
    EXPECT_NEAR(total.epsilon, 8.0, 1e-9) << cl.client_id;
    EXPECT_NEAR(total.delta, 2 * delta, 1e-15) << cl.client_id;
    std::map<Phase, double> eps;
    for (const auto& e : ledger.EntriesFor(cl.client_id)) eps[e.phase] += e.budget.epsilon;
    if (cl.capacity == Capacity::kStrong) {
      ++strong;
      EXPECT_NEAR(eps[Phase::kTrain], 6.0, 1e-9);
      EXPECT_EQ(eps.count(Phase::kVote), 0u);
    } else {
      EXPECT_NEAR(eps[Phase::kVote], 6.0, 1e-9);
      EXPECT_EQ(eps.count(Phase::kTrain), 0u);
    }
    EXPECT_NEAR(eps[Phase::kProfile], 2.0, 1e-9);
  }
  EXPECT_EQ(strong, 2u);
}

TEST_F(PipelineTest, NonPrivateFinetuneSkipsTrainEntries) {
  RunConfig c = SmallConfig(root_);
  c.non_private_training = true;
  RunGenCorpus(c);
  RunPartition(c);
  RunFinetune(c);
  const auto ledger =
      Ledger::FromJson(nlohmann::json::parse(Slurp(ArtifactLayout{root_}.ledger())));
  for (const auto& e : ledger.Entries()) EXPECT_NE(e.phase, Phase::kTrain);
  std::ifstream log(ArtifactLayout{root_}.train_log());
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_EQ(nlohmann::json::parse(line)["noise_multiplier"].get<double>(), 0.0);
}

TEST_F(PipelineTest, UniformRefineKeepsSizeAndChangesSelection) {
  RunConfig c = SmallConfig(root_);
  RunPipeline(c);
  const ArtifactLayout l{root_};
  const auto codes = PrepareData(c).codes;
  const SyntheticDataset weighted = ReadSynthetic(l.refined(), codes);
  c.uniform = true;
  RunRefine(c);
  const SyntheticDataset uniform = ReadSynthetic(l.refined(), codes);
  EXPECT_EQ(weighted.size(), uniform.size());
  for (size_t j = 0; j < codes.size(); ++j) {
    EXPECT_EQ(weighted.index_sets[j].size(), uniform.index_sets[j].size());
  }
  EXPECT_NE(weighted.samples, uniform.samples);
}

TEST_F(PipelineTest, InfiniteEpsilonFullRateIsPermutation) {
  RunConfig c = SmallConfig(root_);
  c.epsilon = std::numeric_limits<double>::infinity();
  c.rate = 1.0;
  c.k = 3;
  RunPipeline(c);
  const ArtifactLayout l{root_};
  const auto codes = PrepareData(c).codes;
  const SyntheticDataset u = ReadSynthetic(l.unrefined(), codes);
  const SyntheticDataset r = ReadSynthetic(l.refined(), codes);
  ASSERT_EQ(u.size(), r.size());
  for (size_t j = 0; j < codes.size(); ++j) {
    std::vector<Document> a, b;
    for (size_t i : u.index_sets[j]) a.push_back(u.samples[i].AsDocument());
    for (size_t i : r.index_sets[j]) b.push_back(r.samples[i].AsDocument());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
  const auto ledger = Ledger::FromJson(nlohmann::json::parse(Slurp(l.ledger())));
  EXPECT_TRUE(ledger.Entries().empty());
}

}  // namespace
}  // namespace fedsyn
