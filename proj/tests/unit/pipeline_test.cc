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

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "jmsi/error.h"
#include "jmsi/pipeline.h"

namespace jmsi {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json small_config() {
  return json::parse(R"({
    "run": {"model": {"num_layers": 1, "d_model": 16, "num_heads": 2, "d_ff": 32},
            "pretrain_steps": 4, "pretrain_schedule": {"warmup_steps": 2, "total_steps": 4},
            "batch_size": 4, "max_epochs": 1},
    "seeds": [1, 2],
    "synth_corpus": {"n_docs": 20, "train_queries": 8, "dev_queries": 8, "test_queries": 8},
    "build_vocab": {},
    "pretrain": {},
    "finetune": {"random_init_baseline": true},
    "evaluate": {"split": "test"}
  })");
}

void expect_usage(const json& config) {
  try {
    plan_pipeline(config);
    FAIL("expected a usage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUsage);
  }
}

TEST_SUITE("pipeline") {

TEST_CASE("synthetic spec json round trip") {
  SyntheticCorpusSpec spec = default_synthetic_spec();
  spec.seed = 77;
  const SyntheticCorpusSpec back = synthetic_spec_from_json(to_json(spec), SyntheticCorpusSpec{});
  CHECK(to_json(back) == to_json(spec));
}

TEST_CASE("invalid plans fail before any work") {
  json c = small_config();
  c["typo"] = 1;
  expect_usage(c);
  c = small_config();
  c["synth_corpus"]["n_documents"] = 3;
  expect_usage(c);
  c = small_config();
  c.erase("build_vocab");
  expect_usage(c);
  c = small_config();
  c.erase("synth_corpus");
  expect_usage(c);
  c = small_config();
  c["evaluate"]["split"] = "train";
  expect_usage(c);
  c = small_config();
  c["run"]["pack"] = {{"k", 0}};
  expect_usage(c);
}

TEST_CASE("absent stages are skipped") {
  json c = json::parse(R"({"synth_corpus": {"n_docs": 5, "train_queries": 3}, "build_vocab": {}})");
  const auto dir = fs::temp_directory_path() / "jmsi_pipeline_partial";
  fs::remove_all(dir);
  const auto summary = run_pipeline(plan_pipeline(c), dir);
  CHECK(summary["stages_run"] == json::array({"synth_corpus", "build_vocab"}));
  CHECK(fs::exists(dir / "corpus.jsonl"));
  CHECK(fs::exists(dir / "vocab.txt"));
  CHECK(fs::exists(dir / "as2_train.tsv"));
  CHECK_FALSE(fs::exists(dir / "as2_dev.tsv"));
  fs::remove_all(dir);
}

TEST_CASE("full plan writes a summary with every seed") {
  const auto dir = fs::temp_directory_path() / "jmsi_pipeline_full";
  fs::remove_all(dir);
  const auto summary = run_pipeline(plan_pipeline(small_config()), dir);
  CHECK(summary["stages_run"].size() == 5);
  CHECK(summary["seeds"] == json::array({1, 2}));
  REQUIRE(summary["per_seed"].size() == 2);
  CHECK(summary["per_seed"][0].contains("baseline"));
  CHECK(summary["per_seed"][1]["evaluate"].contains("baseline_report"));
  CHECK(summary["aggregate"].contains("t_test"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "seed_2" / "finetune" / "best.jmsc"));
  std::ifstream in(dir / "summary.json");
  CHECK(json::parse(in)["aggregate"] == json(summary["aggregate"]));
  fs::remove_all(dir);
}

}  // TEST_SUITE
}  // namespace
}  // namespace jmsi
