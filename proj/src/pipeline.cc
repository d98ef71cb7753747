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

#include "jmsi/pipeline.h"

#include <fstream>
#include <numeric>
#include <optional>
#include <set>

#include "jmsi/checkpoint.h"
#include "jmsi/error.h"
#include "jmsi/evaluation.h"
#include "jmsi/random.h"
#include "jmsi/sampler.h"
#include "jmsi/tokenizer.h"
#include "jmsi/training.h"

namespace jmsi {
namespace {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr std::uint64_t kBaselineInitStream = 0xba5e;
const char* const kSplits[] = {"train", "dev", "test"};

void check_keys(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) usage_error(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      usage_error("unknown pipeline key '" + where + "." + item.key() + "'");
    }
  }
}

template <typename V>
V get_or(const Json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const Json::exception& e) {
    usage_error(std::string("pipeline key '") + key + "': " + e.what());
  }
}

bool is_verification_task(const std::string& task) {
  if (task == "as2") return false;
  if (task == "verification") return true;
  usage_error("unknown task '" + task + "' (expected as2 or verification)");
}

struct Inputs {
  std::optional<fs::path> corpus, vocab, checkpoint;
  CorpusFormat corpus_format = CorpusFormat::kJsonlDocs;
  std::string task = "as2";
  std::map<std::string, fs::path> splits;
};

Inputs parse_inputs(const Json& config) {
  Inputs in;
  if (!config.contains("inputs")) return in;
  const Json& j = config["inputs"];
  check_keys(j, {"corpus", "corpus_format", "vocab", "task", "train", "dev", "test", "checkpoint"},
             "inputs");
  if (j.contains("corpus")) in.corpus = get_or<std::string>(j, "corpus", "");
  if (j.contains("vocab")) in.vocab = get_or<std::string>(j, "vocab", "");
  if (j.contains("checkpoint")) in.checkpoint = get_or<std::string>(j, "checkpoint", "");
  in.corpus_format = parse_corpus_format(get_or<std::string>(j, "corpus_format", "jsonl-docs"));
  in.task = get_or<std::string>(j, "task", "as2");
  for (const char* split : kSplits) {
    if (j.contains(split)) in.splits[split] = get_or<std::string>(j, split, "");
  }
  return in;
}

std::string task_of(const Json& config) {
  if (config.contains("synth_corpus")) {
    return get_or<std::string>(config["synth_corpus"], "task", "as2");
  }
  return parse_inputs(config).task;
}

std::string eval_split(const Json& config) {
  const std::string split = get_or<std::string>(config["evaluate"], "split", "test");
  if (split != "dev" && split != "test") usage_error("evaluate.split must be dev or test");
  return split;
}

std::vector<CandidateBundle> load_bundles(const fs::path& path, bool verification, int k) {
  std::ifstream in(path);
  if (!in) data_error("cannot open " + path.string());
  if (verification) return build_bundles(read_verification_jsonl(in), k, OverflowPolicy::kTruncate);
  return build_bundles(read_as2_tsv(in), k, OverflowPolicy::kTruncate);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double task_metric(const EvalReport& r) {
  return r.label_accuracy ? *r.label_accuracy : r.p_at_1;
}

}  // namespace

OJson to_json(const SyntheticCorpusSpec& s) {
  OJson j;
  j["seed"] = s.seed;
  j["n_docs"] = s.n_docs;
  j["paras_per_doc"] = s.paras_per_doc;
  j["sents_per_para"] = s.sents_per_para;
  j["topic_vocab_size"] = s.topic_vocab_size;
  j["filler_vocab_size"] = s.filler_vocab_size;
  j["min_fillers"] = s.min_fillers;
  j["max_fillers"] = s.max_fillers;
  j["topic_pool_size"] = s.topic_pool_size;
  j["topic_word_share"] = s.topic_word_share;
  return j;
}

SyntheticCorpusSpec synthetic_spec_from_json(const Json& j, const SyntheticCorpusSpec& base) {
  SyntheticCorpusSpec s = base;
  s.seed = get_or(j, "seed", s.seed);
  s.n_docs = get_or(j, "n_docs", s.n_docs);
  s.paras_per_doc = get_or(j, "paras_per_doc", s.paras_per_doc);
  s.sents_per_para = get_or(j, "sents_per_para", s.sents_per_para);
  s.topic_vocab_size = get_or(j, "topic_vocab_size", s.topic_vocab_size);
  s.filler_vocab_size = get_or(j, "filler_vocab_size", s.filler_vocab_size);
  s.min_fillers = get_or(j, "min_fillers", s.min_fillers);
  s.max_fillers = get_or(j, "max_fillers", s.max_fillers);
  s.topic_pool_size = get_or(j, "topic_pool_size", s.topic_pool_size);
  s.topic_word_share = get_or(j, "topic_word_share", s.topic_word_share);
  return s;
}

SyntheticCorpusSpec default_synthetic_spec() {
  SyntheticCorpusSpec s;
  s.n_docs = 200;
  s.paras_per_doc = 3;
  s.sents_per_para = 3;
  s.topic_vocab_size = 50;
  s.filler_vocab_size = 200;
  s.min_fillers = 2;
  s.max_fillers = 3;
  s.topic_pool_size = 4;
  s.topic_word_share = 0.8;
  return s;
}

PipelinePlan plan_pipeline(const Json& config) {
  check_keys(config,
             {"preset", "run", "seeds", "synth_corpus", "inputs", "build_vocab", "pretrain",
              "finetune", "evaluate"},
             "pipeline");
  PipelinePlan plan;
  plan.config = config;
  plan.run = run_preset(get_or<std::string>(config, "preset", "desk-scale"));
  if (config.contains("run")) plan.run = run_config_from_json(config["run"], plan.run);
  {
    RunConfig probe = plan.run;
    if (probe.model.vocab_size == 0) probe.model.vocab_size = kNumReserved + 1;
    probe.validate();
  }
  plan.seeds = get_or<std::vector<std::uint64_t>>(config, "seeds", {plan.run.seed});
  if (plan.seeds.empty()) usage_error("pipeline seeds must not be empty");

  const bool synth = config.contains("synth_corpus");
  if (synth) {
    const Json& s = config["synth_corpus"];
    check_keys(s,
               {"seed", "n_docs", "paras_per_doc", "sents_per_para", "topic_vocab_size",
                "filler_vocab_size", "min_fillers", "max_fillers", "topic_pool_size",
                "topic_word_share", "task", "train_queries", "dev_queries", "test_queries"},
               "synth_corpus");
    synthetic_spec_from_json(s, default_synthetic_spec());
    for (const char* key : {"train_queries", "dev_queries", "test_queries"}) {
      if (get_or(s, key, 0) < 0) usage_error(std::string("synth_corpus.") + key + " must be >= 0");
    }
  }
  const Inputs inputs = parse_inputs(config);
  const bool verification = is_verification_task(task_of(config));
  if (config.contains("build_vocab")) {
    check_keys(config["build_vocab"], {"max_size", "min_freq"}, "build_vocab");
  }
  for (const char* stage : {"pretrain", "finetune", "evaluate"}) {
    if (config.contains(stage) && !config[stage].is_object()) {
      usage_error(std::string(stage) + " must be a JSON object");
    }
  }
  if (config.contains("pretrain")) check_keys(config["pretrain"], {}, "pretrain");
  if (config.contains("finetune")) check_keys(config["finetune"], {"random_init_baseline"}, "finetune");
  if (config.contains("evaluate")) {
    check_keys(config["evaluate"], {"split"}, "evaluate");
    eval_split(config);
  }

  const bool has_corpus = synth || inputs.corpus.has_value();
  const bool has_vocab = config.contains("build_vocab") || inputs.vocab.has_value();
  auto has_split = [&](const char* split) {
    if (synth) return get_or(config["synth_corpus"], (std::string(split) + "_queries").c_str(), 0) > 0;
    return inputs.splits.contains(split);
  };
  if (config.contains("build_vocab") && !has_corpus) {
    usage_error("build_vocab needs synth_corpus or inputs.corpus");
  }
  if (config.contains("pretrain") && !(has_corpus && has_vocab)) {
    usage_error("pretrain needs a corpus and a vocabulary");
  }
  if (config.contains("finetune")) {
    if (!has_vocab || !has_split("train") || !has_split("dev")) {
      usage_error("finetune needs a vocabulary plus train and dev data");
    }
    if (is_per_candidate(plan.run.finetune_head) == verification) {
      usage_error("finetune_head " + std::string(head_kind_name(plan.run.finetune_head)) +
                  " does not fit the " + (verification ? "verification" : "as2") + " task");
    }
  }
  if (config.contains("evaluate")) {
    if (!has_vocab || !has_split(eval_split(config).c_str())) {
      usage_error("evaluate needs a vocabulary and " + eval_split(config) + " data");
    }
    if (!config.contains("finetune") && !inputs.checkpoint) {
      usage_error("evaluate needs the finetune stage or inputs.checkpoint");
    }
  }
  return plan;
}

OJson run_pipeline(const PipelinePlan& plan, const fs::path& out_dir, const PipelineLogger& log) {
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  const Json& config = plan.config;
  const Inputs inputs = parse_inputs(config);
  const bool verification = is_verification_task(task_of(config));
  const int k = plan.run.pack.k;
  fs::create_directories(out_dir);

  OJson summary;
  summary["stages_run"] = OJson::array();
  auto stage_done = [&](const char* name) { summary["stages_run"].push_back(name); };

  std::optional<Corpus> corpus;
  std::map<std::string, fs::path> split_paths = inputs.splits;
  if (config.contains("synth_corpus")) {
    const Json& s = config["synth_corpus"];
    const SyntheticCorpusSpec spec = synthetic_spec_from_json(s, default_synthetic_spec());
    corpus = generate_synthetic_corpus(spec);
    {
      std::ofstream out(out_dir / "corpus.jsonl");
      write_corpus_jsonl(*corpus, out);
    }
    std::uint64_t stream = 0;
    for (const char* split : kSplits) {
      ++stream;
      const int n = get_or(s, (std::string(split) + "_queries").c_str(), 0);
      if (n == 0) continue;
      const SyntheticAs2Spec data{derive_seed(spec.seed, stream), n, k};
      const fs::path path =
          out_dir / (verification ? std::string("verification_") + split + ".jsonl"
                                  : std::string("as2_") + split + ".tsv");
      std::ofstream out(path);
      if (verification) {
        write_verification_jsonl(generate_synthetic_verification(data, spec), out);
      } else {
        write_as2_tsv(generate_synthetic_as2(data, spec), out);
      }
      split_paths[split] = path;
    }
    summary["synth_corpus"] = to_json(spec);
    const CorpusStats stats = corpus_stats(*corpus);
    summary["synth_corpus"]["sentences"] = stats.num_sentences;
    say("synth-corpus: " + std::to_string(stats.num_documents) + " documents, " +
        std::to_string(stats.num_sentences) + " sentences");
    stage_done("synth_corpus");
  } else if (inputs.corpus) {
    corpus = ingest_corpus(*inputs.corpus, inputs.corpus_format);
  }

  Vocab vocab;
  if (config.contains("build_vocab")) {
    const Json& v = config["build_vocab"];
    vocab = build_vocab(*corpus, get_or<std::size_t>(v, "max_size", 30000),
                        get_or<std::size_t>(v, "min_freq", 1));
    save_vocab(vocab, out_dir / "vocab.txt");
    say("build-vocab: " + std::to_string(vocab.size()) + " tokens");
    stage_done("build_vocab");
  } else if (inputs.vocab) {
    vocab = load_vocab(*inputs.vocab);
  }

  std::map<std::string, std::vector<CandidateBundle>> bundles;
  for (const auto& [split, path] : split_paths) {
    bundles[split] = load_bundles(path, verification, k);
  }

  const bool do_pretrain = config.contains("pretrain");
  const bool do_finetune = config.contains("finetune");
  const bool do_evaluate = config.contains("evaluate");
  const bool baseline =
      do_pretrain && do_finetune &&
      get_or(config.contains("finetune") ? config["finetune"] : Json::object(),
             "random_init_baseline", false);
  std::optional<Model<float>> given;
  if (inputs.checkpoint) given = load_checkpoint(*inputs.checkpoint).model;

  std::vector<double> dev_main, dev_base, eval_main, eval_base;
  summary["seeds"] = plan.seeds;
  summary["per_seed"] = OJson::array();
  for (const std::uint64_t seed : plan.seeds) {
    RunConfig run = plan.run;
    run.seed = seed;
    const fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
    OJson entry;
    entry["seed"] = seed;

    std::optional<Model<float>> model = given;
    if (do_pretrain) {
      PretrainOptions options;
      options.out_dir = seed_dir / "pretrain";
      if (given) options.init = &*given;
      options.on_step = [&](const StepLog& s) {
        if (s.step % 250 == 0) {
          say("pretrain seed " + std::to_string(seed) + " step " + std::to_string(s.step) +
              " loss " + std::to_string(s.loss) + " mspp_acc " +
              std::to_string(s.mspp_accuracy));
        }
      };
      PretrainResult result = pretrain(run, *corpus, vocab, options);
      OJson p;
      p["steps"] = result.log.size();
      if (!result.log.empty()) {
        const StepLog& last = result.log.back();
        p["final"] = {{"loss", last.loss}, {"mlm_loss", last.mlm_loss},
                      {"mspp_loss", last.mspp_loss}, {"mspp_accuracy", last.mspp_accuracy}};
      }
      entry["pretrain"] = p;
      model = std::move(result.model);
    }

    auto random_model = [&] {
      const RunConfig resolved = resolve_run_config(run, vocab);
      return init_model<float>(resolved.model, derive_seed(seed, kBaselineInitStream));
    };

    std::optional<Model<float>> tuned, tuned_base;
    if (do_finetune) {
      const Model<float> init = model ? *model : random_model();
      FinetuneOptions options;
      options.out_dir = seed_dir / "finetune";
      FinetuneResult r = finetune(run, bundles["train"], bundles["dev"], vocab, init, options);
      const EvalReport& best = r.history[r.best_epoch - 1].dev_report;
      entry["finetune"] = {{"best_epoch", r.best_epoch},
                           {"epochs_run", r.history.size()},
                           {"dev", to_json(best)}};
      dev_main.push_back(task_metric(best));
      say("finetune seed " + std::to_string(seed) + ": best dev metric " +
          std::to_string(task_metric(best)) + " at epoch " + std::to_string(r.best_epoch));
      tuned = std::move(r.best_model);
      if (baseline) {
        FinetuneOptions base_options;
        base_options.out_dir = seed_dir / "baseline";
        FinetuneResult b =
            finetune(run, bundles["train"], bundles["dev"], vocab, random_model(), base_options);
        const EvalReport& bb = b.history[b.best_epoch - 1].dev_report;
        entry["baseline"] = {{"best_epoch", b.best_epoch},
                             {"epochs_run", b.history.size()},
                             {"dev", to_json(bb)}};
        dev_base.push_back(task_metric(bb));
        say("baseline seed " + std::to_string(seed) + ": best dev metric " +
            std::to_string(task_metric(bb)));
        tuned_base = std::move(b.best_model);
      }
    } else {
      tuned = model;
    }

    if (do_evaluate) {
      const std::string split = eval_split(config);
      const HeadKind head = plan.run.finetune_head;
      const EvalReport r = evaluate_bundles(*tuned, head, bundles[split], run.pack, vocab);
      entry["evaluate"] = {{"split", split}, {"report", to_json(r)}};
      eval_main.push_back(task_metric(r));
      if (tuned_base) {
        const EvalReport b = evaluate_bundles(*tuned_base, head, bundles[split], run.pack, vocab);
        entry["evaluate"]["baseline_report"] = to_json(b);
        eval_base.push_back(task_metric(b));
      }
    }
    summary["per_seed"].push_back(entry);
  }
  if (do_pretrain) stage_done("pretrain");
  if (do_finetune) stage_done("finetune");
  if (do_evaluate) stage_done("evaluate");

  const std::string metric = verification ? "label_accuracy" : "p_at_1";
  OJson agg;
  agg["metric"] = metric;
  if (!dev_main.empty()) agg["dev_mean"] = mean_of(dev_main);
  if (!dev_base.empty()) agg["dev_baseline_mean"] = mean_of(dev_base);
  if (!eval_main.empty()) agg["eval_mean"] = mean_of(eval_main);
  if (!eval_base.empty()) agg["eval_baseline_mean"] = mean_of(eval_base);
  const auto& a = eval_main.empty() ? dev_main : eval_main;
  const auto& b = eval_base.empty() ? dev_base : eval_base;
  if (a.size() >= 2 && a.size() == b.size()) {
    agg["t_test"] = to_json(paired_t_test(a, b));
  }
  summary["aggregate"] = agg;
  summary["run_config"] = to_json(plan.run);

  std::ofstream out(out_dir / "summary.json");
  out << summary.dump(2) << '\n';
  return summary;
}

}  // namespace jmsi
