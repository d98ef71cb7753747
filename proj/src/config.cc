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

#include "jmsi/config.h"

#include <fstream>
#include <set>

#include "jmsi/error.h"

namespace jmsi {
namespace {

using Json = nlohmann::json;

void reject_unknown_keys(const Json& j, const std::set<std::string>& known,
                         const std::string& where) {
  if (!j.is_object()) usage_error(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      usage_error("unknown config key '" + where + "." + item.key() + "'");
    }
  }
}

template <typename V>
void read(const Json& j, const char* key, V& value) {
  if (!j.contains(key)) return;
  try {
    value = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    usage_error(std::string("config key '") + key + "': " + e.what());
  }
}

std::string_view metric_name(EarlyStopMetric m) {
  return m == EarlyStopMetric::kDevMap ? "dev-MAP" : "dev-accuracy";
}

EarlyStopMetric parse_metric(std::string_view name) {
  if (name == "dev-MAP" || name == "dev-map") return EarlyStopMetric::kDevMap;
  if (name == "dev-accuracy") return EarlyStopMetric::kDevAccuracy;
  usage_error("unknown early-stopping metric '" + std::string(name) +
              "' (expected dev-MAP or dev-accuracy)");
}

nlohmann::ordered_json schedule_json(const ScheduleConfig& s) {
  nlohmann::ordered_json j;
  j["warmup_steps"] = s.warmup_steps;
  j["total_steps"] = s.total_steps;
  j["peak_lr"] = s.peak_lr;
  return j;
}

ScheduleConfig schedule_from_json(const Json& j, ScheduleConfig s,
                                  const std::string& where) {
  reject_unknown_keys(j, {"warmup_steps", "total_steps", "peak_lr"}, where);
  read(j, "warmup_steps", s.warmup_steps);
  read(j, "total_steps", s.total_steps);
  read(j, "peak_lr", s.peak_lr);
  return s;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    usage_error("optimizer betas must lie in [0, 1)");
  }
  if (!(eps > 0)) usage_error("optimizer eps must be positive");
  if (!(weight_decay >= 0)) usage_error("weight_decay must be >= 0");
  if (!(clip_norm > 0)) usage_error("clip_norm must be positive");
}

void ScheduleConfig::validate() const {
  if (!(warmup_steps > 0 && warmup_steps <= total_steps)) {
    usage_error("schedule needs 0 < warmup_steps <= total_steps");
  }
  if (!(peak_lr >= 0)) usage_error("peak_lr must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  pack.validate();
  sampler.validate();
  optimizer.validate();
  pretrain_schedule.validate();
  if (finetune_schedule.total_steps != 0) finetune_schedule.validate();
  if (sampler.k() != pack.k) {
    usage_error("sampler k1+k2+k3 (" + std::to_string(sampler.k()) +
                ") must equal pack k (" + std::to_string(pack.k) + ")");
  }
  if (model.type_vocab < pack.slots()) {
    usage_error("model type_vocab must be >= k+1");
  }
  if (model.max_positions < pack.total_len()) {
    usage_error("model max_positions must be >= L*(k+1)");
  }
  if (!is_per_candidate(pretrain_head)) {
    usage_error("pretrain_head must be IEk or AEk");
  }
  if (batch_size < 1) usage_error("batch_size must be >= 1");
  if (pretrain_steps < 0) usage_error("pretrain_steps must be >= 0");
  if (patience < 0 || max_epochs < 1) {
    usage_error("patience must be >= 0 and max_epochs >= 1");
  }
  if (!(mask_prob >= 0 && mask_prob <= 1)) usage_error("mask_prob must be in [0, 1]");
  if (fixed_examples < 0 || checkpoint_every < 0) {
    usage_error("fixed_examples and checkpoint_every must be >= 0");
  }
}

nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["vocab_size"] = cfg.vocab_size;
  j["max_positions"] = cfg.max_positions;
  j["type_vocab"] = cfg.type_vocab;
  j["num_layers"] = cfg.num_layers;
  j["d_model"] = cfg.d_model;
  j["num_heads"] = cfg.num_heads;
  j["d_ff"] = cfg.d_ff;
  j["dropout"] = cfg.dropout;
  j["num_classes"] = cfg.num_classes;
  j["heads"] = nlohmann::ordered_json::array();
  for (HeadKind h : cfg.heads) j["heads"].push_back(head_kind_name(h));
  j["layer_norm_eps"] = cfg.layer_norm_eps;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  return run_config_from_json(Json{{"model", j}}, RunConfig{}).model;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"] = to_json(cfg.model);
  j["pack"] = {{"L", cfg.pack.L}, {"k", cfg.pack.k}};
  j["sampler"] = {{"k1", cfg.sampler.k1},
                  {"k2", cfg.sampler.k2},
                  {"k3", cfg.sampler.k3},
                  {"shuffle_candidates", cfg.sampler.shuffle_candidates}};
  j["optimizer"] = {{"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"clip_norm", cfg.optimizer.clip_norm}};
  j["pretrain_schedule"] = schedule_json(cfg.pretrain_schedule);
  j["finetune_schedule"] = schedule_json(cfg.finetune_schedule);
  j["batch_size"] = cfg.batch_size;
  j["pretrain_steps"] = cfg.pretrain_steps;
  j["pretrain_head"] = head_kind_name(cfg.pretrain_head);
  j["finetune_head"] = head_kind_name(cfg.finetune_head);
  j["early_stopping"] = metric_name(cfg.early_stopping);
  j["patience"] = cfg.patience;
  j["max_epochs"] = cfg.max_epochs;
  j["mask_prob"] = cfg.mask_prob;
  j["mlm_weight"] = cfg.mlm_weight;
  j["mspp_weight"] = cfg.mspp_weight;
  j["fixed_examples"] = cfg.fixed_examples;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["seed"] = cfg.seed;
  return j;
}

RunConfig run_config_from_json(const Json& j, const RunConfig& base) {
  RunConfig cfg = base;
  reject_unknown_keys(
      j,
      {"model", "pack", "sampler", "optimizer", "pretrain_schedule",
       "finetune_schedule", "batch_size", "pretrain_steps", "pretrain_head",
       "finetune_head", "early_stopping", "patience", "max_epochs", "mask_prob",
       "mlm_weight", "mspp_weight", "fixed_examples", "checkpoint_every", "seed"},
      "run");
  if (j.contains("model")) {
    const Json& m = j["model"];
    reject_unknown_keys(m,
                        {"vocab_size", "max_positions", "type_vocab", "num_layers",
                         "d_model", "num_heads", "d_ff", "dropout", "num_classes",
                         "heads", "layer_norm_eps"},
                        "model");
    read(m, "vocab_size", cfg.model.vocab_size);
    read(m, "max_positions", cfg.model.max_positions);
    read(m, "type_vocab", cfg.model.type_vocab);
    read(m, "num_layers", cfg.model.num_layers);
    read(m, "d_model", cfg.model.d_model);
    read(m, "num_heads", cfg.model.num_heads);
    read(m, "d_ff", cfg.model.d_ff);
    read(m, "dropout", cfg.model.dropout);
    read(m, "num_classes", cfg.model.num_classes);
    read(m, "layer_norm_eps", cfg.model.layer_norm_eps);
    if (m.contains("heads")) {
      std::vector<std::string> names;
      read(m, "heads", names);
      cfg.model.heads.clear();
      for (const auto& n : names) cfg.model.heads.push_back(parse_head_kind(n));
    }
  }
  if (j.contains("pack")) {
    reject_unknown_keys(j["pack"], {"L", "k"}, "pack");
    read(j["pack"], "L", cfg.pack.L);
    read(j["pack"], "k", cfg.pack.k);
  }
  if (j.contains("sampler")) {
    const Json& s = j["sampler"];
    reject_unknown_keys(s, {"k1", "k2", "k3", "shuffle_candidates"}, "sampler");
    read(s, "k1", cfg.sampler.k1);
    read(s, "k2", cfg.sampler.k2);
    read(s, "k3", cfg.sampler.k3);
    read(s, "shuffle_candidates", cfg.sampler.shuffle_candidates);
  }
  if (j.contains("optimizer")) {
    const Json& o = j["optimizer"];
    reject_unknown_keys(o, {"beta1", "beta2", "eps", "weight_decay", "clip_norm"},
                        "optimizer");
    read(o, "beta1", cfg.optimizer.beta1);
    read(o, "beta2", cfg.optimizer.beta2);
    read(o, "eps", cfg.optimizer.eps);
    read(o, "weight_decay", cfg.optimizer.weight_decay);
    read(o, "clip_norm", cfg.optimizer.clip_norm);
  }
  if (j.contains("pretrain_schedule")) {
    cfg.pretrain_schedule = schedule_from_json(j["pretrain_schedule"],
                                               cfg.pretrain_schedule,
                                               "pretrain_schedule");
  }
  if (j.contains("finetune_schedule")) {
    cfg.finetune_schedule = schedule_from_json(j["finetune_schedule"],
                                               cfg.finetune_schedule,
                                               "finetune_schedule");
  }
  read(j, "batch_size", cfg.batch_size);
  read(j, "pretrain_steps", cfg.pretrain_steps);
  if (j.contains("pretrain_head")) {
    cfg.pretrain_head = parse_head_kind(j["pretrain_head"].get<std::string>());
  }
  if (j.contains("finetune_head")) {
    cfg.finetune_head = parse_head_kind(j["finetune_head"].get<std::string>());
  }
  if (j.contains("early_stopping")) {
    cfg.early_stopping = parse_metric(j["early_stopping"].get<std::string>());
  }
  read(j, "patience", cfg.patience);
  read(j, "max_epochs", cfg.max_epochs);
  read(j, "mask_prob", cfg.mask_prob);
  read(j, "mlm_weight", cfg.mlm_weight);
  read(j, "mspp_weight", cfg.mspp_weight);
  read(j, "fixed_examples", cfg.fixed_examples);
  read(j, "checkpoint_every", cfg.checkpoint_every);
  read(j, "seed", cfg.seed);
  return cfg;
}

RunConfig run_preset(std::string_view name) {
  RunConfig cfg;
  if (name == "paper-scale") {
    cfg.model = model_preset("joint-base-shape");
    cfg.model.heads = {HeadKind::kIEk};
    cfg.pack = PackConfig{64, 5};
    cfg.pretrain_schedule = ScheduleConfig{10000, 100000, 5e-5};
    cfg.finetune_schedule = ScheduleConfig{1000, 0, 2e-6};
    cfg.pretrain_steps = 100000;
    cfg.batch_size = 4096;
    cfg.max_epochs = 40;
    return cfg;
  }
  if (name == "desk-scale") {
    cfg.model.vocab_size = 0;  // filled from the vocabulary at run time
    cfg.model.max_positions = 64;
    cfg.model.type_vocab = 6;
    cfg.model.num_layers = 2;
    cfg.model.d_model = 64;
    cfg.model.num_heads = 4;
    cfg.model.d_ff = 256;
    cfg.model.dropout = 0.1;
    cfg.pack = PackConfig{8, 5};
    cfg.pretrain_schedule = ScheduleConfig{100, 2000, 3e-3};
    cfg.finetune_schedule = ScheduleConfig{20, 0, 5e-4};
    cfg.pretrain_steps = 2000;
    cfg.batch_size = 16;
    cfg.max_epochs = 10;
    cfg.patience = 3;
    return cfg;
  }
  usage_error("unknown run preset '" + std::string(name) + "'");
}

std::vector<std::string> run_preset_names() { return {"desk-scale", "paper-scale"}; }

ModelConfig model_preset(std::string_view name) {
  ModelConfig cfg;
  cfg.vocab_size = 50265;
  cfg.max_positions = 514;
  cfg.num_layers = 12;
  cfg.d_model = 768;
  cfg.num_heads = 12;
  cfg.d_ff = 3072;
  cfg.dropout = 0.1;
  cfg.heads.clear();
  if (name == "roberta-base-shape") {
    cfg.type_vocab = 1;
    return cfg;
  }
  if (name == "joint-base-shape") {
    cfg.type_vocab = 6;
    return cfg;
  }
  usage_error("unknown model preset '" + std::string(name) + "'");
}

std::vector<std::string> model_preset_names() {
  return {"roberta-base-shape", "joint-base-shape"};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) usage_error("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    usage_error("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace jmsi
