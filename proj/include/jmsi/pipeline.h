/*
 * Copyright 2026 The JMSI Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef JMSI_PIPELINE_H_
#define JMSI_PIPELINE_H_

#include <filesystem>
#include <functional>
#include <string>

#include "jmsi/config.h"
#include "jmsi/corpus.h"
#include "json.hpp"

namespace jmsi {

nlohmann::ordered_json to_json(const SyntheticCorpusSpec& spec);
SyntheticCorpusSpec synthetic_spec_from_json(const nlohmann::json& j,
                                             const SyntheticCorpusSpec& base);

// The synthetic topic corpus used by the shipped experiment presets.
SyntheticCorpusSpec default_synthetic_spec();

// Stage-by-stage experiment description:
//
//   {"preset": "desk-scale", "run": {...RunConfig overrides...},
//    "seeds": [1, 2, 3],
//    "synth_corpus": {...SyntheticCorpusSpec..., "task": "as2",
//                     "train_queries": 64, "dev_queries": 200,
//                     "test_queries": 200},
//    "build_vocab": {"max_size": 5000, "min_freq": 1},
//    "pretrain": {},
//    "finetune": {"random_init_baseline": true},
//    "evaluate": {"split": "test"}}
//
// Absent stages are skipped. Without synth_corpus the inputs come from
// "inputs": {"corpus", "corpus_format", "vocab", "task", "train", "dev",
// "test", "checkpoint"}.
struct PipelinePlan {
  RunConfig run;
  std::vector<std::uint64_t> seeds;
  nlohmann::json config;
};

// Parses and validates the whole plan; throws a usage error before any work.
PipelinePlan plan_pipeline(const nlohmann::json& config);

using PipelineLogger = std::function<void(const std::string&)>;

// Runs the planned stages and returns the summary that is also written to
// out_dir/summary.json.
nlohmann::ordered_json run_pipeline(const PipelinePlan& plan,
                                    const std::filesystem::path& out_dir,
                                    const PipelineLogger& log = {});

}  // namespace jmsi

#endif  // JMSI_PIPELINE_H_
