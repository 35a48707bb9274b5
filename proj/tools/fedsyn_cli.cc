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

// Command-line front end: the full pipeline plus one subcommand per stage.

#include <cstdlib>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fedsyn/pipeline.h"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> epsilon;
  std::optional<double> strong_fraction;
  std::optional<std::string> strong_codes;
  std::optional<size_t> k;
  std::optional<double> rate;
  bool uniform = false;
  bool non_private = false;
  bool audit = false;
  std::optional<std::string> out;
};

std::set<size_t> ParseCodeList(const std::string& s) {
  std::set<size_t> codes;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t used = 0;
    const unsigned long v = std::stoul(item, &used);
    if (used != item.size()) {
      throw std::invalid_argument("bad code index '" + item + "'");
    }
    codes.insert(v);
  }
  return codes;
}

fedsyn::RunConfig Resolve(const Overrides& o) {
  fedsyn::RunConfig cfg;
  if (!o.config_path.empty()) cfg = fedsyn::LoadRunConfig(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epsilon) {
    cfg.epsilon = (*o.epsilon == "inf")
                      ? std::numeric_limits<double>::infinity()
                      : std::stod(*o.epsilon);
  }
  if (o.strong_fraction) cfg.strong_fraction = *o.strong_fraction;
  if (o.strong_codes) cfg.strong_codes = ParseCodeList(*o.strong_codes);
  if (o.k) cfg.k = *o.k;
  if (o.rate) cfg.rate = *o.rate;
  if (o.uniform) cfg.uniform = true;
  if (o.non_private) cfg.non_private_training = true;
  if (o.audit) cfg.audit = true;
  if (o.out) {
    cfg.output_dir = *o.out;
  } else if (const char* env = std::getenv(fedsyn::kOutputDirEnv)) {
    cfg.output_dir = env;
  }
  cfg.Validate();
  return cfg;
}

void AddCommon(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--epsilon", o.epsilon, "Per-client epsilon, or 'inf'");
  cmd->add_option("--strong-fraction", o.strong_fraction,
                  "Fraction of strong clients");
  cmd->add_option("--strong-codes", o.strong_codes,
                  "Comma-separated code indices held by strong clients");
  cmd->add_option("--k", o.k, "Neighbors per vote");
  cmd->add_option("--rate", o.rate, "Per-code resampling rate");
  cmd->add_flag("--uniform", o.uniform, "Resample uniformly within codes");
  cmd->add_flag("--non-private", o.non_private, "Finetune without DP noise");
  cmd->add_flag("--audit", o.audit, "Keep raw votes (non-private)");
  cmd->add_option("-o,--out", o.out, "Output directory");
}

void PrintMetrics(const fedsyn::EvalResult& r) {
  for (const auto* m : {&r.unrefined, &r.refined}) {
    std::cout << m->label << ": size=" << m->size << " mmd=" << m->mmd
              << " code_tv=" << m->code_tv
              << " accuracy=" << m->downstream_accuracy
              << " macro_f1=" << m->downstream_macro_f1 << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private synthetic text across federated silos"};
  app.require_subcommand(1);
  Overrides o;

  std::function<void()> action;
  auto stage = [&](const char* name, const char* help,
                   std::function<void(const fedsyn::RunConfig&)> fn) {
    CLI::App* cmd = app.add_subcommand(name, help);
    AddCommon(cmd, o);
    cmd->callback([&o, &action, fn] {
      action = [&o, fn] { fn(Resolve(o)); };
    });
  };
  stage("run", "Run every stage and print metrics",
        [](const fedsyn::RunConfig& c) { PrintMetrics(fedsyn::RunPipeline(c)); });
  stage("gen-corpus", "Write the train, reference and test corpora",
        fedsyn::RunGenCorpus);
  stage("partition", "Split the training corpus across clients",
        fedsyn::RunPartition);
  stage("finetune", "DP federated finetuning", fedsyn::RunFinetune);
  stage("generate", "DP profiling and profile-guided generation",
        fedsyn::RunGenerate);
  stage("refine", "DP vote refinement and resampling", fedsyn::RunRefine);
  stage("eval", "Score unrefined and refined sets",
        [](const fedsyn::RunConfig& c) { PrintMetrics(fedsyn::RunEval(c)); });

  CLI::App* dump = app.add_subcommand("default-config",
                                      "Print the default configuration");
  dump->callback([&action] {
    action = [] { std::cout << fedsyn::RunConfig{}.ToJson().dump(2) << '\n'; };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    action();
  } catch (const fedsyn::StageError& e) {
    std::cerr << "fedsyn: stage '" << e.stage() << "' failed: " << e.what()
              << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fedsyn: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
