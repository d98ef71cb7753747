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

#include "commands.h"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jmsi/checkpoint.h"
#include "jmsi/config.h"
#include "jmsi/corpus.h"
#include "jmsi/error.h"
#include "jmsi/evaluation.h"
#include "jmsi/packing.h"
#include "jmsi/pipeline.h"
#include "jmsi/random.h"
#include "jmsi/sampler.h"
#include "jmsi/tokenizer.h"
#include "jmsi/training.h"

namespace jmsi::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string kebab(std::string s) {
  for (char& c : s) {
    if (c == '_') c = '-';
  }
  return s;
}

// One --flag per RunConfig leaf. Leaf names shared by two groups (the two
// schedules) carry the group as a prefix.
class RunFlags {
 public:
  // groups: top-level RunConfig keys to expose; empty exposes all of them.
  void attach(CLI::App* app, const std::set<std::string>& groups = {}) {
    const OJson defaults = to_json(RunConfig{});
    std::map<std::string, int> leaf_count;
    for (const auto& [group, value] : defaults.items()) {
      if (value.is_object()) {
        for (const auto& item : value.items()) ++leaf_count[item.key()];
      }
    }
    app->add_option("--preset", preset_, "Run preset (desk-scale | paper-scale)")
        ->capture_default_str();
    app->add_option("--config", config_path_, "RunConfig JSON file applied over the preset");
    for (const auto& [group, value] : defaults.items()) {
      if (!groups.empty() && !groups.contains(group)) continue;
      if (value.is_object()) {
        for (const auto& item : value.items()) {
          const std::string& leaf = item.key();
          const std::string name = leaf_count[leaf] > 1 ? group + "_" + leaf : leaf;
          add(app, name, {group, leaf}, item.value());
        }
      } else {
        add(app, group, {group}, value);
      }
    }
  }

  RunConfig resolve() const {
    RunConfig run = run_preset(preset_);
    if (!config_path_.empty()) run = run_config_from_json(read_json_file(config_path_), run);
    Json overrides = Json::object();
    for (const auto& flag : flags_) {
      if (flag->option->count() == 0) continue;
      Json value;
      if (flag->path.back() == "heads") {
        value = Json::array();
        std::stringstream list(flag->text);
        std::string item;
        while (std::getline(list, item, ',')) {
          if (!item.empty()) value.push_back(item);
        }
      } else {
        value = Json::parse(flag->text, nullptr, false);
        if (value.is_discarded() || value.is_string() || value.is_object() || value.is_array()) {
          value = flag->text;
        }
      }
      if (flag->path.size() == 1) {
        overrides[flag->path[0]] = value;
      } else {
        overrides[flag->path[0]][flag->path[1]] = value;
      }
    }
    return run_config_from_json(overrides, run);
  }

  bool given(const std::string& leaf) const {
    for (const auto& flag : flags_) {
      if (flag->path.back() == leaf && flag->option->count() > 0) return true;
    }
    return false;
  }

 private:
  struct Flag {
    std::vector<std::string> path;
    std::string text;
    CLI::Option* option = nullptr;
  };

  void add(CLI::App* app, const std::string& name, std::vector<std::string> path,
           const OJson& fallback) {
    auto flag = std::make_unique<Flag>();
    flag->path = std::move(path);
    std::string doc = "RunConfig ";
    for (std::size_t i = 0; i < flag->path.size(); ++i) doc += (i ? "." : "") + flag->path[i];
    if (fallback.is_array()) doc += " (comma-separated)";
    flag->option = app->add_option("--" + kebab(name), flag->text, doc);
    flags_.push_back(std::move(flag));
  }

  std::string preset_ = "desk-scale";
  std::string config_path_;
  std::vector<std::unique_ptr<Flag>> flags_;
};

void write_json(const fs::path& path, const OJson& j) {
  std::ofstream out(path);
  if (!out) data_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) data_error("cannot write " + path.string());
  return out;
}

bool verification_task(const std::string& task, HeadKind head) {
  if (task == "as2") return false;
  if (task == "verification") return true;
  if (task.empty()) return !is_per_candidate(head);
  usage_error("unknown task '" + task + "' (expected as2 or verification)");
}

std::vector<CandidateBundle> load_bundles(const fs::path& path, bool verification, int k,
                                          OverflowPolicy policy) {
  std::ifstream in(path);
  if (!in) data_error("cannot open " + path.string());
  if (verification) return build_bundles(read_verification_jsonl(in), k, policy);
  return build_bundles(read_as2_tsv(in), k, policy);
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------

struct CorpusArgs {
  std::string path;
  std::string format = "jsonl-docs";

  void attach(CLI::App* app, const std::string& flag, bool required) {
    auto* opt = app->add_option(flag, path, "Corpus file (jsonl-docs) or directory (plaintext-dir)");
    if (required) opt->required();
    app->add_option("--format", format, "Corpus format: jsonl-docs | plaintext-dir")
        ->capture_default_str();
  }
  Corpus load() const { return ingest_corpus(path, parse_corpus_format(format)); }
};

void register_build_corpus(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("build-corpus", "Ingest raw documents into a jsonl-docs corpus");
  auto args = std::make_shared<CorpusArgs>();
  auto out = std::make_shared<std::string>();
  args->attach(cmd, "--input", true);
  cmd->add_option("--out", *out, "Output directory")->required();
  cmd->callback([&run, args, out] {
    run = [args, out] {
      const Corpus corpus = args->load();
      fs::create_directories(*out);
      auto stream = open_out(fs::path(*out) / "corpus.jsonl");
      write_corpus_jsonl(corpus, stream);
      const CorpusStats s = corpus_stats(corpus);
      write_json(fs::path(*out) / "corpus_stats.json",
                 {{"documents", s.num_documents},
                  {"paragraphs", s.num_paragraphs},
                  {"sentences", s.num_sentences},
                  {"mspp_eligible_anchors", s.num_mspp_eligible_anchors}});
      std::printf("documents %zu\nparagraphs %zu\nsentences %zu\neligible anchors %zu\n",
                  s.num_documents, s.num_paragraphs, s.num_sentences,
                  s.num_mspp_eligible_anchors);
      return 0;
    };
  });
}

void register_synth_corpus(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("synth-corpus", "Generate a synthetic topic corpus and task data");
  auto spec = std::make_shared<SyntheticCorpusSpec>(default_synthetic_spec());
  struct Extra {
    std::string out, task = "as2";
    int train = 0, dev = 0, test = 0, candidates = 5;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--seed", spec->seed, "Generator seed")->capture_default_str();
  cmd->add_option("--n-docs", spec->n_docs, "Documents")->capture_default_str();
  cmd->add_option("--paras-per-doc", spec->paras_per_doc, "Paragraphs per document")
      ->capture_default_str();
  cmd->add_option("--sents-per-para", spec->sents_per_para, "Sentences per paragraph")
      ->capture_default_str();
  cmd->add_option("--topic-vocab-size", spec->topic_vocab_size, "Distinct topic words")
      ->capture_default_str();
  cmd->add_option("--filler-vocab-size", spec->filler_vocab_size, "Shared filler words")
      ->capture_default_str();
  cmd->add_option("--min-fillers", spec->min_fillers, "Minimum filler words per sentence")
      ->capture_default_str();
  cmd->add_option("--max-fillers", spec->max_fillers, "Maximum filler words per sentence")
      ->capture_default_str();
  cmd->add_option("--topic-pool-size", spec->topic_pool_size, "Filler words owned by each topic")
      ->capture_default_str();
  cmd->add_option("--topic-word-share", spec->topic_word_share,
                  "Probability a filler comes from the topic's own pool")
      ->capture_default_str();
  cmd->add_option("--task", x->task, "Task data to emit: as2 | verification")
      ->capture_default_str();
  cmd->add_option("--train-queries", x->train, "Train queries (0 = none)")->capture_default_str();
  cmd->add_option("--dev-queries", x->dev, "Dev queries (0 = none)")->capture_default_str();
  cmd->add_option("--test-queries", x->test, "Test queries (0 = none)")->capture_default_str();
  cmd->add_option("--n-candidates", x->candidates, "Candidates per query")->capture_default_str();
  cmd->add_option("--out", x->out, "Output directory")->required();
  cmd->callback([&run, spec, x] {
    run = [spec, x] {
      const bool verification = verification_task(x->task, HeadKind::kIEk);
      const Corpus corpus = generate_synthetic_corpus(*spec);
      const fs::path out(x->out);
      fs::create_directories(out);
      {
        auto stream = open_out(out / "corpus.jsonl");
        write_corpus_jsonl(corpus, stream);
      }
      OJson meta = to_json(*spec);
      meta["task"] = x->task;
      const std::pair<const char*, int> splits[] = {
          {"train", x->train}, {"dev", x->dev}, {"test", x->test}};
      std::uint64_t stream_id = 0;
      for (const auto& [split, n] : splits) {
        ++stream_id;
        if (n < 0) usage_error("query counts must be >= 0");
        if (n == 0) continue;
        const SyntheticAs2Spec data{derive_seed(spec->seed, stream_id), n, x->candidates};
        const std::string name = verification ? std::string("verification_") + split + ".jsonl"
                                              : std::string("as2_") + split + ".tsv";
        auto stream = open_out(out / name);
        if (verification) {
          write_verification_jsonl(generate_synthetic_verification(data, *spec), stream);
        } else {
          write_as2_tsv(generate_synthetic_as2(data, *spec), stream);
        }
        meta["files"][split] = name;
      }
      write_json(out / "synth_spec.json", meta);
      const CorpusStats s = corpus_stats(corpus);
      std::printf("documents %zu\nsentences %zu\neligible anchors %zu\n", s.num_documents,
                  s.num_sentences, s.num_mspp_eligible_anchors);
      return 0;
    };
  });
}

void register_build_vocab(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("build-vocab", "Build a word-level vocabulary from a corpus");
  auto corpus = std::make_shared<CorpusArgs>();
  struct Extra {
    std::string out;
    std::size_t max_size = 30000, min_freq = 1;
  };
  auto x = std::make_shared<Extra>();
  corpus->attach(cmd, "--corpus", true);
  cmd->add_option("--max-size", x->max_size, "Maximum vocabulary size including reserved tokens")
      ->capture_default_str();
  cmd->add_option("--min-freq", x->min_freq, "Minimum word count")->capture_default_str();
  cmd->add_option("--out", x->out, "Output directory")->required();
  cmd->callback([&run, corpus, x] {
    run = [corpus, x] {
      const Vocab vocab = build_vocab(corpus->load(), x->max_size, x->min_freq);
      fs::create_directories(x->out);
      save_vocab(vocab, fs::path(x->out) / "vocab.txt");
      std::printf("vocab size %zu\n", vocab.size());
      return 0;
    };
  });
}

void register_sample(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("sample", "Preview MSPP examples drawn from a corpus");
  auto corpus = std::make_shared<CorpusArgs>();
  struct Extra {
    SamplerConfig sampler;
    int n = 1;
    std::uint64_t seed = 0;
    bool no_shuffle = false;
    std::string out, vocab;
    int L = 64;
    double mask_prob = 0.15;
  };
  auto x = std::make_shared<Extra>();
  corpus->attach(cmd, "--corpus", true);
  cmd->add_option("--k1", x->sampler.k1, "Positives from the anchor's paragraph")
      ->capture_default_str();
  cmd->add_option("--k2", x->sampler.k2, "Hard negatives from the anchor's document")
      ->capture_default_str();
  cmd->add_option("--k3", x->sampler.k3, "Easy negatives from other documents")
      ->capture_default_str();
  cmd->add_option("--n", x->n, "Number of examples")->capture_default_str();
  cmd->add_option("--seed", x->seed, "Sampling seed")->capture_default_str();
  cmd->add_flag("--no-shuffle", x->no_shuffle, "Keep candidates grouped by provenance");
  cmd->add_option("--vocab", x->vocab, "Vocabulary; also writes an MLM-masked packed shard");
  cmd->add_option("--L", x->L, "Slot length for the packed shard")->capture_default_str();
  cmd->add_option("--mask-prob", x->mask_prob, "MLM selection probability for the shard")
      ->capture_default_str();
  cmd->add_option("--out", x->out, "Output directory (default: JSONL on standard output)");
  cmd->callback([&run, corpus, x] {
    run = [corpus, x] {
      if (x->n < 0) usage_error("--n must be >= 0");
      if (!x->vocab.empty() && x->out.empty()) usage_error("--vocab requires --out");
      SamplerConfig cfg = x->sampler;
      cfg.shuffle_candidates = !x->no_shuffle;
      const Corpus c = corpus->load();
      const MsppSampler sampler(c, cfg);
      std::vector<MsppExample> examples;
      for (int i = 0; i < x->n; ++i) examples.push_back(sampler.sample(example_seed(x->seed, i)));
      if (x->out.empty()) {
        write_mspp_jsonl(examples, std::cout);
        return 0;
      }
      fs::create_directories(x->out);
      auto stream = open_out(fs::path(x->out) / "mspp_examples.jsonl");
      write_mspp_jsonl(examples, stream);
      if (!x->vocab.empty()) {
        const Vocab vocab = load_vocab(x->vocab);
        const PackConfig pack{x->L, cfg.k()};
        pack.validate();
        std::vector<PackedInput> packed;
        for (int i = 0; i < x->n; ++i) {
          PackedInput p = pack_mspp_example(examples[i], vocab, pack);
          mask_packed_input(p, vocab, x->mask_prob, derive_seed(example_seed(x->seed, i), 1));
          packed.push_back(std::move(p));
        }
        auto shard = open_out(fs::path(x->out) / "mspp_packed.shard");
        write_packed_shard(shard, pack, packed);
      }
      std::printf("wrote %d MSPP examples to %s\n", x->n, x->out.c_str());
      return 0;
    };
  });
}

void register_pretrain(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("pretrain", "MSPP + MLM pre-training of the joint encoder");
  auto corpus = std::make_shared<CorpusArgs>();
  auto flags = std::make_shared<RunFlags>();
  struct Extra {
    std::string vocab, init, out;
  };
  auto x = std::make_shared<Extra>();
  corpus->attach(cmd, "--corpus", true);
  cmd->add_option("--vocab", x->vocab, "Vocabulary file")->required();
  cmd->add_option("--init", x->init, "Checkpoint to continue from");
  cmd->add_option("--out", x->out, "Output directory")->required();
  flags->attach(cmd);
  cmd->callback([&run, corpus, flags, x] {
    run = [corpus, flags, x] {
      const Vocab vocab = load_vocab(x->vocab);
      const RunConfig config = resolve_run_config(flags->resolve(), vocab);
      const Corpus c = corpus->load();
      std::optional<Model<float>> init;
      if (!x->init.empty()) init = load_checkpoint(x->init).model;
      const fs::path out(x->out);
      fs::create_directories(out);
      write_json(out / "run_config.json", to_json(config));
      PretrainOptions options;
      options.out_dir = out;
      if (init) options.init = &*init;
      const auto start = Clock::now();
      options.on_step = [&](const StepLog& s) {
        if (s.step % 100 == 0 || s.step == config.pretrain_steps) {
          std::printf("step %lld lr %.3g loss %.4f mlm %.4f mspp %.4f mspp_acc %.3f\n",
                      static_cast<long long>(s.step), s.lr, s.loss, s.mlm_loss, s.mspp_loss,
                      s.mspp_accuracy);
          std::fflush(stdout);
        }
      };
      const PretrainResult result = pretrain(config, c, vocab, options);
      OJson summary;
      summary["steps"] = result.log.size();
      summary["seed"] = config.seed;
      if (!result.log.empty()) {
        const StepLog& s = result.log.back();
        summary["final"] = {{"loss", s.loss}, {"mlm_loss", s.mlm_loss},
                            {"mspp_loss", s.mspp_loss}, {"mspp_accuracy", s.mspp_accuracy}};
      }
      summary["checkpoint"] =
          "checkpoints/step_" + std::to_string(config.pretrain_steps) + ".jmsc";
      write_json(out / "summary.json", summary);
      std::printf("pretrained %zu steps in %.1fs\n", result.log.size(), seconds_since(start));
      return 0;
    };
  });
}

struct TaskArgs {
  std::string vocab, task;
  std::string overflow = "truncate";
  void attach(CLI::App* cmd) {
    cmd->add_option("--vocab", vocab, "Vocabulary file")->required();
    cmd->add_option("--task", task, "as2 | verification (default: from the head kind)");
    cmd->add_option("--overflow", overflow, "Bundles over k candidates: truncate | split")
        ->capture_default_str();
  }
};

void register_finetune(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("finetune", "Fine-tune a joint model on AS2 or verification data");
  auto flags = std::make_shared<RunFlags>();
  auto task = std::make_shared<TaskArgs>();
  struct Extra {
    std::string train, dev, init, out;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--train", x->train, "Training data (AS2 TSV or verification JSONL)")
      ->required();
  cmd->add_option("--dev", x->dev, "Development data used for early stopping")->required();
  cmd->add_option("--init", x->init, "Pre-trained checkpoint (default: random initialization)");
  cmd->add_option("--out", x->out, "Output directory")->required();
  task->attach(cmd);
  flags->attach(cmd);
  cmd->callback([&run, flags, task, x] {
    run = [flags, task, x] {
      const Vocab vocab = load_vocab(task->vocab);
      const RunConfig config = resolve_run_config(flags->resolve(), vocab);
      const bool verification = verification_task(task->task, config.finetune_head);
      const OverflowPolicy policy = parse_overflow_policy(task->overflow);
      const auto train = load_bundles(x->train, verification, config.pack.k, policy);
      const auto dev = load_bundles(x->dev, verification, config.pack.k, policy);
      const Model<float> init = x->init.empty()
                                    ? init_model<float>(config.model, config.seed)
                                    : load_checkpoint(x->init).model;
      const fs::path out(x->out);
      fs::create_directories(out);
      write_json(out / "run_config.json", to_json(config));
      FinetuneOptions options;
      options.out_dir = out;
      options.on_epoch = [](const EpochLog& e) {
        std::printf("epoch %d steps %lld train_loss %.4f dev_metric %.4f\n", e.epoch,
                    static_cast<long long>(e.steps), e.train_loss, e.dev_metric);
        std::fflush(stdout);
      };
      const FinetuneResult r = finetune(config, train, dev, vocab, init, options);
      const EvalReport& best = r.history[r.best_epoch - 1].dev_report;
      write_json(out / "summary.json", {{"best_epoch", r.best_epoch},
                                        {"best_metric", r.best_metric},
                                        {"epochs_run", r.history.size()},
                                        {"dev", to_json(best)},
                                        {"checkpoint", "best.jmsc"}});
      std::printf("best epoch %d\n%s", r.best_epoch, format_report_table(best).c_str());
      return 0;
    };
  });
}

void register_evaluate(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("evaluate", "Score a data set with a fine-tuned checkpoint");
  auto flags = std::make_shared<RunFlags>();
  auto task = std::make_shared<TaskArgs>();
  struct Extra {
    std::string checkpoint, data, out, head;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--checkpoint", x->checkpoint, "Model checkpoint")->required();
  cmd->add_option("--data", x->data, "AS2 TSV or verification JSONL")->required();
  cmd->add_option("--head", x->head, "Head to score with (default: finetune-head)");
  cmd->add_option("--out", x->out, "Output directory for eval_report.json and scores.tsv");
  task->attach(cmd);
  flags->attach(cmd, {"pack", "finetune_head"});
  cmd->callback([&run, flags, task, x] {
    run = [flags, task, x] {
      const Vocab vocab = load_vocab(task->vocab);
      RunConfig config = flags->resolve();
      const HeadKind head = x->head.empty() ? config.finetune_head : parse_head_kind(x->head);
      const bool verification = verification_task(task->task, head);
      const auto bundles = load_bundles(x->data, verification, config.pack.k,
                                        parse_overflow_policy(task->overflow));
      const Model<float> model = load_checkpoint(x->checkpoint).model;
      const auto start = Clock::now();
      const EvalReport report = evaluate_bundles(model, head, bundles, config.pack, vocab);
      const double elapsed = seconds_since(start);
      std::printf("%s", format_report_table(report).c_str());
      std::printf("wall-clock %.3fs for %zu queries\n", elapsed, bundles.size());
      if (!x->out.empty()) {
        const fs::path out(x->out);
        fs::create_directories(out);
        write_json(out / "eval_report.json", to_json(report));
        if (is_per_candidate(head)) {
          ScoreTable scores;
          for (const auto& b : bundles) {
            scores[b.bundle_id] = score_bundle(model, head, b, config.pack, vocab);
          }
          auto stream = open_out(out / "scores.tsv");
          write_score_tsv(scores, stream);
        }
      }
      return 0;
    };
  });
}

void register_rerank(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand(
      "rerank", "Re-rank the top-k candidates of an external scorer with the joint model");
  auto flags = std::make_shared<RunFlags>();
  auto task = std::make_shared<TaskArgs>();
  struct Extra {
    std::string checkpoint, data, scores, out, head;
    int top_k = 5;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--checkpoint", x->checkpoint, "Joint model checkpoint")->required();
  cmd->add_option("--data", x->data, "AS2 TSV with every candidate of each question")
      ->required();
  cmd->add_option("--scores", x->scores, "External scores TSV: bundle_id, candidate_index, score")
      ->required();
  cmd->add_option("--top-k", x->top_k, "Candidates re-ranked by the joint model")
      ->capture_default_str();
  cmd->add_option("--head", x->head, "Per-candidate head (default: finetune-head)");
  cmd->add_option("--out", x->out, "Output directory");
  task->attach(cmd);
  flags->attach(cmd, {"pack", "finetune_head"});
  cmd->callback([&run, flags, task, x] {
    run = [flags, task, x] {
      const Vocab vocab = load_vocab(task->vocab);
      const RunConfig config = flags->resolve();
      const HeadKind head = x->head.empty() ? config.finetune_head : parse_head_kind(x->head);
      if (!is_per_candidate(head)) usage_error("rerank needs an IEk or AEk head");
      std::ifstream data(x->data);
      if (!data) data_error("cannot open " + x->data);
      // Every candidate stays in one bundle; only the top-k reach the model.
      const auto bundles =
          build_bundles(read_as2_tsv(data), std::numeric_limits<int>::max(), OverflowPolicy::kTruncate);
      std::ifstream score_in(x->scores);
      if (!score_in) data_error("cannot open " + x->scores);
      const ScoreTable external = read_score_tsv(score_in);
      const Model<float> model = load_checkpoint(x->checkpoint).model;

      std::vector<GradedRanking> upstream, cascaded;
      ScoreTable output;
      const auto start = Clock::now();
      for (const auto& b : bundles) {
        const auto it = external.find(b.bundle_id);
        if (it == external.end() || it->second.size() != b.candidates.size()) {
          data_error("external scores do not cover bundle " + b.bundle_id);
        }
        upstream.push_back({rank_by_scores(b.bundle_id, it->second), b.gold});
        RankingResult r = cascade_rerank(it->second, model, head, x->top_k, b, config.pack, vocab);
        std::vector<double> by_index(b.candidates.size());
        for (std::size_t pos = 0; pos < r.order.size(); ++pos) by_index[r.order[pos]] = r.scores[pos];
        output[b.bundle_id] = std::move(by_index);
        cascaded.push_back({std::move(r), b.gold});
      }
      const double elapsed = seconds_since(start);
      const EvalReport before = compute_ranking_metrics(upstream);
      const EvalReport after = compute_ranking_metrics(cascaded);
      std::printf("external ranking\n%sre-ranked top-%d\n%s", format_report_table(before).c_str(),
                  x->top_k, format_report_table(after).c_str());
      std::printf("wall-clock %.3fs for %zu questions\n", elapsed, bundles.size());
      if (!x->out.empty()) {
        const fs::path out(x->out);
        fs::create_directories(out);
        write_json(out / "rerank_report.json",
                   {{"top_k", x->top_k}, {"external", to_json(before)}, {"reranked", to_json(after)}});
        auto stream = open_out(out / "reranked_scores.tsv");
        write_score_tsv(output, stream);
      }
      return 0;
    };
  });
}

void register_cost_model(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("cost-model", "Analytical joint-versus-pairwise inference cost");
  struct Extra {
    int k = 5;
    std::string out;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--k", x->k, "Candidates per joint input")->required();
  cmd->add_option("--out", x->out, "Output directory for cost_model.json");
  cmd->callback([&run, x] {
    run = [x] {
      const CostReport r = latency_ratio(x->k);
      std::ostringstream text;
      text << "quadratic_ratio " << r.quadratic_ratio << "\nlinear_ratio " << r.linear_ratio << '\n';
      std::printf("%s", text.str().c_str());
      if (!x->out.empty()) {
        fs::create_directories(x->out);
        write_json(fs::path(x->out) / "cost_model.json", to_json(r));
      }
      return 0;
    };
  });
}

void register_count_params(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand("count-params", "Count encoder parameters of a model shape");
  struct Extra {
    std::string preset, config, out;
    bool heads = false;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--preset", x->preset, "Model preset: roberta-base-shape | joint-base-shape");
  cmd->add_option("--config", x->config, "ModelConfig JSON file");
  cmd->add_flag("--include-heads", x->heads, "Also count the MLM bias and prediction heads");
  cmd->add_option("--out", x->out, "Output directory for params.json");
  cmd->callback([&run, x] {
    run = [x] {
      if (x->preset.empty() == x->config.empty()) {
        usage_error("count-params needs exactly one of --preset and --config");
      }
      const ModelConfig cfg = x->preset.empty() ? model_config_from_json(read_json_file(x->config))
                                                : model_preset(x->preset);
      const std::size_t n = count_parameters(cfg, x->heads);
      std::printf("%zu\n", n);
      if (!x->out.empty()) {
        fs::create_directories(x->out);
        write_json(fs::path(x->out) / "params.json",
                   {{"model", to_json(cfg)}, {"include_heads", x->heads}, {"parameters", n}});
      }
      return 0;
    };
  });
}

void register_pipeline(CLI::App& app, std::function<int()>& run) {
  auto* cmd = app.add_subcommand(
      "pipeline", "Run synth-corpus, build-vocab, pretrain, finetune and evaluate from one config");
  struct Extra {
    std::string config, out;
  };
  auto x = std::make_shared<Extra>();
  cmd->add_option("--config", x->config, "Pipeline JSON file")->required();
  cmd->add_option("--out", x->out, "Output directory")->required();
  cmd->callback([&run, x] {
    run = [x] {
      const PipelinePlan plan = plan_pipeline(read_json_file(x->config));
      const auto start = Clock::now();
      const OJson summary = run_pipeline(plan, x->out, [&](const std::string& msg) {
        std::printf("[%7.1fs] %s\n", seconds_since(start), msg.c_str());
        std::fflush(stdout);
      });
      std::printf("aggregate %s\nsummary written to %s\n", summary["aggregate"].dump().c_str(),
                  (fs::path(x->out) / "summary.json").c_str());
      return 0;
    };
  });
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Joint multi-sentence cross-encoder: pre-training, fine-tuning and evaluation"};
  app.require_subcommand(1, 1);
  std::function<int()> run;
  register_build_corpus(app, run);
  register_synth_corpus(app, run);
  register_build_vocab(app, run);
  register_sample(app, run);
  register_pretrain(app, run);
  register_finetune(app, run);
  register_evaluate(app, run);
  register_rerank(app, run);
  register_cost_model(app, run);
  register_count_params(app, run);
  register_pipeline(app, run);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }
  try {
    return run ? run() : 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(ErrorKind::kData);
  }
}

}  // namespace jmsi::cli
