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

#ifndef JMSI_CONFIG_H_
#define JMSI_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "jmsi/model.h"
#include "jmsi/packing.h"
#include "jmsi/sampler.h"
#include "json.hpp"

namespace jmsi {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;

  void validate() const;
};

// Triangular schedule: linear warmup to peak_lr, linear decay to zero at
// total_steps.
struct ScheduleConfig {
  std::int64_t warmup_steps = 10000;
  std::int64_t total_steps = 100000;
  double peak_lr = 5e-5;

  void validate() const;
};

enum class EarlyStopMetric { kDevMap, kDevAccuracy };

struct RunConfig {
  ModelConfig model;
  PackConfig pack;
  SamplerConfig sampler;
  OptimizerConfig optimizer;
  ScheduleConfig pretrain_schedule;
  // total_steps == 0 derives the horizon from max_epochs and the train size.
  ScheduleConfig finetune_schedule{1000, 0, 2e-6};
  int batch_size = 32;
  std::int64_t pretrain_steps = 100000;
  HeadKind pretrain_head = HeadKind::kIEk;
  HeadKind finetune_head = HeadKind::kIEk;
  EarlyStopMetric early_stopping = EarlyStopMetric::kDevMap;
  int patience = 3;
  int max_epochs = 40;
  double mask_prob = 0.15;
  double mlm_weight = 1.0;
  double mspp_weight = 1.0;
  // > 0 cycles a fixed pool of this many MSPP examples instead of sampling
  // fresh ones every step.
  int fixed_examples = 0;
  // Checkpoint cadence in steps; 0 writes only the initial and final ones.
  std::int64_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RunConfig& cfg);
// Unknown keys are a usage error; missing keys keep the `base` values.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base);

// "paper-scale": the large-scale hyperparameters (100k steps, batch 4096,
// peak 5e-5, 10k warmup, L=64, k=5, base-sized encoder). "desk-scale": a
// 2-layer, d=64 encoder that trains in minutes on a CPU.
RunConfig run_preset(std::string_view name);
std::vector<std::string> run_preset_names();

// Model shapes for parameter counting: "roberta-base-shape" (one token type)
// and "joint-base-shape" (k+1 = 6 token types).
ModelConfig model_preset(std::string_view name);
std::vector<std::string> model_preset_names();

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace jmsi

#endif  // JMSI_CONFIG_H_
