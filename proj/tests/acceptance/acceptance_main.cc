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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. `--only 1,3,7` restricts the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.h"
#include "jmsi/config.h"
#include "jmsi/corpus.h"
#include "jmsi/evaluation.h"
#include "jmsi/model.h"
#include "jmsi/packing.h"
#include "jmsi/pipeline.h"
#include "jmsi/random.h"
#include "jmsi/sampler.h"
#include "jmsi/tokenizer.h"
#include "jmsi/training.h"
#include "oracles.h"

#ifndef JMSI_SOURCE_DIR
#define JMSI_SOURCE_DIR "."
#endif

namespace jmsi {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

Vocab numbered_vocab(int size) {
  std::vector<std::string> words;
  for (int i = kNumReserved; i < size; ++i) words.push_back("w" + std::to_string(i));
  return Vocab(words);
}

// ---------------------------------------------------------------------------

Outcome cost_model() {
  const CostReport five = latency_ratio(5);
  const CostReport one = latency_ratio(1);
  const bool ok = five.quadratic_ratio == 1.8 && five.linear_ratio == 0.6 &&
                  one.quadratic_ratio == 1.0 && one.linear_ratio == 1.0;
  return {ok, fmt("k=5 -> (%g, %g); k=1 -> (%g, %g)", five.quadratic_ratio,
                  five.linear_ratio, one.quadratic_ratio, one.linear_ratio)};
}

Outcome parameter_count() {
  const ModelConfig base = model_preset("roberta-base-shape");
  const ModelConfig joint = model_preset("joint-base-shape");
  const std::size_t nb = count_parameters(base, false);
  const std::size_t nj = count_parameters(joint, false);
  const bool ok = nb == 124055040u && nb == testing::analytic_encoder_params(base) &&
                  nj == 124058880u && nj == testing::analytic_encoder_params(joint);
  return {ok, "roberta-base-shape " + std::to_string(nb) + ", joint-base-shape " +
                  std::to_string(nj) + " (oracle " +
                  std::to_string(testing::analytic_encoder_params(joint)) + ")"};
}

Outcome gradient_check() {
  const auto cases = testing::grad_check_cases();
  std::set<HeadKind> heads;
  bool mlm = false;
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (const auto& c : cases) {
    const auto r = testing::run_grad_check(c, 1e-5);
    heads.insert(c.head);
    mlm = mlm || c.with_mlm;
    checked += r.checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = c.name + " " + r.worst_param;
    }
  }
  const bool ok = cases.size() >= 6 && heads.size() == 4 && mlm && worst < 1e-4;
  return {ok, std::to_string(cases.size()) + " configs, " + std::to_string(checked) +
                  " parameters, max rel error " + fmt("%.3g", worst) + " at " + where};
}

Outcome packing_invariants() {
  Rng rng(20240);
  int failures = 0;
  std::string first;
  auto fail = [&](int n, const std::string& what) {
    if (failures++ == 0) first = "case " + std::to_string(n) + ": " + what;
  };
  const Vocab vocab = numbered_vocab(60);
  for (int n = 0; n < 1000; ++n) {
    const PackConfig cfg{2 + static_cast<int>(rng.uniform_index(15)),
                         1 + static_cast<int>(rng.uniform_index(8))};
    std::vector<std::vector<TokenId>> slots(cfg.slots());
    for (auto& s : slots) {
      const int len = static_cast<int>(rng.uniform_index(cfg.L + 3));
      for (int t = 0; t < len; ++t) {
        s.push_back(rng.bernoulli(0.05) ? kMaskId
                                        : kNumReserved + static_cast<TokenId>(rng.uniform_index(55)));
      }
    }
    const PackedInput p = pack_example(slots, cfg, vocab);
    const int total = cfg.total_len();
    if (static_cast<int>(p.token_ids.size()) != total) fail(n, "length");
    for (int i = 0; i < total; ++i) {
      if (p.position_ids[i] != i) fail(n, "position ids");
      if (p.type_ids[i] != i / cfg.L) fail(n, "type ids");
      if ((p.attention_mask[i] == 1) != (p.token_ids[i] != kPadId)) fail(n, "mask vs PAD");
    }
    for (int s = 0; s < cfg.slots(); ++s) {
      if (p.token_ids[s * cfg.L] != kClsId) fail(n, "CLS at slot start");
      const std::size_t keep = std::min<std::size_t>(slots[s].size(), cfg.L - 2);
      const std::vector<TokenId> want(slots[s].begin(), slots[s].begin() + keep);
      if (unpack_slot(p, s) != want) fail(n, "slot round trip");
      if (decode(vocab, unpack_slot(p, s)) != decode(vocab, want)) fail(n, "slot text");
    }
  }
  return {failures == 0, failures == 0 ? "1000 random cases"
                                       : std::to_string(failures) + " violations; first " + first};
}

Outcome sampler_statistics() {
  const Corpus corpus = generate_synthetic_corpus(default_synthetic_spec());
  const Vocab vocab = build_vocab(corpus, 30000, 1);
  const SamplerConfig cfg{1, 2, 2, true};
  const MsppSampler sampler(corpus, cfg);
  const PackConfig pack{16, cfg.k()};
  int bad = 0;
  std::size_t eligible = 0, selected = 0, masked = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::uint64_t seed = example_seed(derive_seed(99, 1), i);
    const MsppExample ex = sampler.sample(seed);
    int pos = 0, hard = 0, easy = 0;
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      const Sentence& s = ex.candidates[c];
      const bool same_doc = s.doc_id == ex.s0.doc_id;
      const bool same_para = same_doc && s.para_id == ex.s0.para_id;
      if (ex.labels[c] != static_cast<int>(same_para)) ++bad;
      pos += same_para;
      hard += same_doc && !same_para;
      easy += !same_doc;
    }
    if (pos != 1 || hard != 2 || easy != 2 || ex.candidates.size() != 5) ++bad;
    PackedInput p = pack_mspp_example(ex, vocab, pack);
    const std::vector<TokenId> original = p.token_ids;
    mask_packed_input(p, vocab, 0.15, derive_seed(seed, 1));
    for (std::size_t t = 0; t < original.size(); ++t) {
      if (is_reserved(original[t])) continue;
      ++eligible;
      if (p.mlm_labels[t] == kIgnore) continue;
      ++selected;
      masked += p.token_ids[t] == kMaskId;
    }
  }
  const double frac = static_cast<double>(selected) / eligible;
  const double share = static_cast<double>(masked) / selected;
  const bool ok = bad == 0 && eligible >= 100000 && std::abs(frac - 0.15) <= 0.01 &&
                  std::abs(share - 0.80) <= 0.02;
  return {ok, "10000 examples, provenance violations " + std::to_string(bad) + ", " +
                  std::to_string(eligible) + " tokens, selected " + fmt("%.4f", frac) +
                  ", [MASK] share " + fmt("%.4f", share)};
}

Outcome metric_oracle() {
  Rng rng(777);
  double worst = 0.0;
  std::size_t qualifying = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const int n_queries = 1 + static_cast<int>(rng.uniform_index(20));
    std::vector<GradedRanking> results;
    std::vector<std::vector<int>> orders, golds;
    for (int q = 0; q < n_queries; ++q) {
      const int n = 1 + static_cast<int>(rng.uniform_index(12));
      std::vector<double> scores(n);
      std::vector<int> gold(n);
      for (int i = 0; i < n; ++i) {
        scores[i] = rng.bernoulli(0.3) ? static_cast<double>(rng.uniform_index(3)) : rng.normal();
        gold[i] = rng.bernoulli(0.25);
      }
      if (q == 0) gold[rng.uniform_index(n)] = 1;
      RankingResult r = rank_by_scores(std::to_string(q), scores);
      orders.push_back(r.order);
      golds.push_back(gold);
      results.push_back({std::move(r), gold});
    }
    const EvalReport got = compute_ranking_metrics(results);
    const testing::OracleMetrics want = testing::brute_force_metrics(orders, golds);
    qualifying += want.n_queries;
    if (got.n_queries != want.n_queries) worst = INFINITY;
    worst = std::max({worst, std::abs(got.map - want.map), std::abs(got.mrr - want.mrr),
                      std::abs(got.p_at_1 - want.p_at_1)});
  }
  // Differences {3, 3, 6}: mean 4, sample variance 3, standard error 1.
  const std::vector<double> a{13, 23, 36}, b{10, 20, 30};
  const TTestResult t = paired_t_test(a, b);
  const bool t_ok = std::abs(t.t_statistic - 4.0) < 1e-12 && t.dof == 2 &&
                    std::abs(t.critical_value - 4.3027) < 1e-4 && !t.significant_at_95;
  return {worst <= 1e-9 && t_ok,
          "1000 instances (" + std::to_string(qualifying) + " queries), max abs diff " +
              fmt("%.3g", worst) + "; t-test t=" + fmt("%.6g", t.t_statistic) + " dof " +
              std::to_string(t.dof) + " crit " + fmt("%.5g", t.critical_value)};
}

RunConfig overfit_run(const Vocab& vocab) {
  RunConfig run = run_preset("desk-scale");
  run.model.dropout = 0.0;
  run.fixed_examples = 32;
  run.batch_size = 32;
  run.pretrain_steps = 500;
  run.pretrain_schedule = ScheduleConfig{50, 500, 3e-3};
  run.seed = 11;
  return resolve_run_config(run, vocab);
}

Outcome learnability(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  // (a) memorize 32 fixed MSPP examples.
  const Corpus corpus = generate_synthetic_corpus(default_synthetic_spec());
  const Vocab vocab = build_vocab(corpus, 30000, 1);
  const RunConfig run = overfit_run(vocab);
  const MsppSampler sampler(corpus, run.sampler);
  const std::vector<PackedInput> fixed = pretrain_batch(run, sampler, vocab, 0);
  const PretrainResult result = pretrain(run, corpus, vocab);
  const double final_acc = mspp_accuracy(result.model, run.pretrain_head, fixed);
  std::int64_t reached = -1;
  for (const auto& s : result.log) {
    if (s.mspp_accuracy >= 1.0) {
      reached = s.step;
      break;
    }
  }
  const bool a_ok = final_acc == 1.0;

  // (b) pre-train + fine-tune against a random-init baseline, three seeds.
  const fs::path config_path = fs::path(JMSI_SOURCE_DIR) / "configs" / "acceptance.json";
  const PipelinePlan plan = plan_pipeline(read_json_file(config_path));
  const fs::path out = work / "learnability";
  fs::remove_all(out);
  const auto summary = run_pipeline(plan, out, [](const std::string& msg) {
    std::printf("  [7] %s\n", msg.c_str());
    std::fflush(stdout);
  });
  const double dev = summary["aggregate"]["dev_mean"].get<double>();
  const double base = summary["aggregate"]["dev_baseline_mean"].get<double>();
  const bool b_ok = plan.seeds.size() == 3 && plan.run.pretrain_steps <= 2000 && dev >= 0.9 &&
                    dev - base >= 0.10;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {a_ok && b_ok,
          "(a) fixed-32 accuracy " + fmt("%.3f", final_acc) + " after 500 steps (batch accuracy first 1.0 at step " +
              std::to_string(reached) + "); (b) dev P@1 " + fmt("%.3f", dev) + " vs random init " +
              fmt("%.3f", base) + " over 3 seeds; " + fmt("%.0fs", secs)};
}

Outcome cascade_fixtures() {
  Rng rng(4242);
  int failures = 0;
  std::string first;
  auto fail = [&](int n, const std::string& what) {
    if (failures++ == 0) first = "fixture " + std::to_string(n) + ": " + what;
  };
  for (int f = 0; f < 500; ++f) {
    const int n = 1 + static_cast<int>(rng.uniform_index(12));
    const int k = 1 + static_cast<int>(rng.uniform_index(8));
    CandidateBundle bundle;
    bundle.bundle_id = std::to_string(f);
    std::vector<double> external(n), joint_by_index(n);
    for (int i = 0; i < n; ++i) {
      bundle.candidates.push_back("c" + std::to_string(i));
      external[i] = static_cast<double>(rng.uniform_index(4));
      joint_by_index[i] = static_cast<double>(rng.uniform_index(3));
    }
    const JointScorer joint = [&](const CandidateBundle& sub) {
      std::vector<double> s;
      for (const auto& c : sub.candidates) s.push_back(joint_by_index[std::stoi(c.substr(1))]);
      return s;
    };
    const RankingResult r = cascade_rerank(external, joint, k, bundle);
    std::vector<int> sorted = r.order;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(sorted.size()) != n || sorted[i] != i) {
        fail(f, "not a permutation");
        break;
      }
    }
    // Oracle: explicit stable selection and ordering by (score desc, index asc).
    std::vector<int> ext(n);
    std::iota(ext.begin(), ext.end(), 0);
    std::stable_sort(ext.begin(), ext.end(), [&](int a, int b) { return external[a] > external[b]; });
    const int top = std::min(n, k);
    std::vector<int> head(ext.begin(), ext.begin() + top);
    std::sort(head.begin(), head.end());
    std::stable_sort(head.begin(), head.end(),
                     [&](int a, int b) { return joint_by_index[a] > joint_by_index[b]; });
    std::vector<int> want = head;
    want.insert(want.end(), ext.begin() + top, ext.end());
    if (r.order != want) fail(f, "order differs from the stable oracle");
    if (n <= k && r.order != rank_by_scores(bundle.bundle_id, joint_by_index).order) {
      fail(f, "n <= k differs from direct ranking");
    }
  }
  return {failures == 0, failures == 0 ? "500 fixtures"
                                       : std::to_string(failures) + " failures; first " + first};
}

std::string bytes_of(const std::function<void(std::ostream&)>& write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

Outcome determinism() {
  const Corpus corpus = generate_synthetic_corpus(default_synthetic_spec());
  const Vocab vocab = build_vocab(corpus, 30000, 1);
  RunConfig run = run_preset("desk-scale");
  run.pretrain_steps = 40;
  run.pretrain_schedule = ScheduleConfig{10, 40, 3e-3};
  run.seed = 17;
  run = resolve_run_config(run, vocab);

  auto losses_with_threads = [&](const char* threads) {
    setenv("JMSI_THREADS", threads, 1);
    const PretrainResult r = pretrain(run, corpus, vocab);
    std::vector<double> out;
    for (const auto& s : r.log) out.push_back(s.loss);
    return out;
  };
  const char* saved = std::getenv("JMSI_THREADS");
  const std::string restore = saved ? saved : "";
  const auto a = losses_with_threads("1");
  const auto b = losses_with_threads("1");
  const auto c = losses_with_threads("3");
  if (saved) {
    setenv("JMSI_THREADS", restore.c_str(), 1);
  } else {
    unsetenv("JMSI_THREADS");
  }
  double repeat = 0.0, threads = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    repeat = std::max(repeat, std::abs(a[i] - b[i]));
    threads = std::max(threads, std::abs(a[i] - c[i]));
  }

  const MsppSampler sampler(corpus, run.sampler);
  auto sample_bytes = [&] {
    std::vector<MsppExample> examples;
    for (int i = 0; i < 200; ++i) examples.push_back(sampler.sample(example_seed(5, i)));
    return bytes_of([&](std::ostream& out) { write_mspp_jsonl(examples, out); });
  };
  auto shard_bytes = [&] {
    std::vector<PackedInput> inputs;
    for (std::int64_t step = 0; step < 4; ++step) {
      const auto batch = pretrain_batch(run, sampler, vocab, step);
      inputs.insert(inputs.end(), batch.begin(), batch.end());
    }
    return bytes_of([&](std::ostream& out) { write_packed_shard(out, run.pack, inputs); });
  };
  const bool sampler_same = sample_bytes() == sample_bytes();
  const bool packer_same = shard_bytes() == shard_bytes();
  const bool ok = a.size() == 40 && repeat <= 1e-6 && threads <= 1e-6 && sampler_same && packer_same;
  return {ok, "40-step loss log max diff " + fmt("%.3g", repeat) + " (repeat), " +
                  fmt("%.3g", threads) + " (1 vs 3 threads); sampler bytes " +
                  (sampler_same ? "identical" : "differ") + ", packer bytes " +
                  (packer_same ? "identical" : "differ")};
}

}  // namespace
}  // namespace jmsi

int main(int argc, char** argv) {
  using namespace jmsi;
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / "jmsi_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      std::string item;
      while (std::getline(list, item, ',')) only.insert(std::stoi(item));
    } else if (arg == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--work-dir DIR]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"cost model", cost_model},
      {"parameter count", parameter_count},
      {"gradient correctness", gradient_check},
      {"packing invariants", packing_invariants},
      {"sampler statistics", sampler_statistics},
      {"metric oracle", metric_oracle},
      {"end-to-end learnability", [&] { return learnability(work); }},
      {"cascade re-ranker", cascade_fixtures},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
