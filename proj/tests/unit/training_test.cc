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

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "jmsi/config.h"
#include "jmsi/corpus.h"
#include "jmsi/error.h"
#include "jmsi/pipeline.h"
#include "jmsi/training.h"

namespace jmsi {
namespace {

double bce(double z, int y) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

RunConfig tiny_run() {
  RunConfig run = run_preset("desk-scale");
  run.model.num_layers = 1;
  run.model.d_model = 16;
  run.model.num_heads = 2;
  run.model.d_ff = 32;
  run.pack = PackConfig{8, 5};
  run.batch_size = 4;
  run.pretrain_steps = 6;
  run.pretrain_schedule = ScheduleConfig{2, 6, 1e-3};
  run.finetune_schedule = ScheduleConfig{2, 0, 1e-3};
  run.max_epochs = 2;
  run.patience = 1;
  run.seed = 5;
  return run;
}

SyntheticCorpusSpec tiny_corpus_spec() {
  SyntheticCorpusSpec spec = default_synthetic_spec();
  spec.n_docs = 20;
  return spec;
}

TEST_SUITE("training") {

TEST_CASE("scalar mspp loss matches the definition") {
  const std::vector<double> z{2.0, -1.0, 0.3, 40.0, -40.0};
  const std::vector<int> y{1, 0, 1, 0, 1};
  const std::vector<int> valid{1, 1, 1, 1, 0};
  const double want = (bce(2.0, 1) + bce(-1.0, 0) + bce(0.3, 1) + 40.0) / 4.0;
  CHECK(mspp_loss(z, y, valid) == doctest::Approx(want).epsilon(1e-12));
  const std::vector<int> none{0, 0, 0, 0, 0};
  CHECK(mspp_loss(z, y, none) == 0.0);
  const std::vector<double> inf{INFINITY, 0, 0, 0, 0};
  CHECK_THROWS_AS(mspp_loss(inf, y, valid), Error);
}

TEST_CASE("template mspp loss agrees with the scalar form") {
  HeadLogits<double> logits;
  logits.kind = HeadKind::kIEk;
  Matrix<double> a(3, 1), b(3, 1);
  a << 0.5, -2.0, 1.5;
  b << 3.0, 0.0, -0.7;
  logits.rows = {a, b};
  const std::vector<int> labels{1, 0, -1, 0, 1, 1};
  const LossNode<double> node = mspp_loss(logits, labels);
  const std::vector<double> flat{0.5, -2.0, 1.5, 3.0, 0.0, -0.7};
  const std::vector<int> y{1, 0, 0, 0, 1, 1};
  const std::vector<int> valid{1, 1, 0, 1, 1, 1};
  CHECK(node.value == doctest::Approx(mspp_loss(flat, y, valid)).epsilon(1e-12));
  const auto& adj = node.head_adjoints.at(HeadKind::kIEk);
  CHECK(adj[0](2, 0) == 0.0);
  const double s = 1.0 / (1.0 + std::exp(-0.5));
  CHECK(adj[0](0, 0) == doctest::Approx((s - 1.0) / 5.0));
}

TEST_CASE("scalar mlm loss matches log-softmax") {
  Matrix<double> logits(2, 3);
  logits << 1.0, 2.0, 3.0, 0.0, 0.0, 0.0;
  const std::vector<TokenId> labels{0, kIgnore};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(mlm_loss(logits, labels) == doctest::Approx(lse - 1.0).epsilon(1e-12));
  const std::vector<TokenId> ignored{kIgnore, kIgnore};
  CHECK(mlm_loss(logits, ignored) == 0.0);
}

TEST_CASE("triangular schedule") {
  const ScheduleConfig s{10, 110, 1e-3};
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 5) == doctest::Approx(5e-4));
  CHECK(lr_at(s, 10) == doctest::Approx(1e-3));
  CHECK(lr_at(s, 60) == doctest::Approx(5e-4));
  CHECK(lr_at(s, 110) == 0.0);
  CHECK(lr_at(s, 500) == 0.0);
}

TEST_CASE("adamw step matches a hand computation") {
  ModelConfig m;
  m.vocab_size = 6;
  m.max_positions = 2;
  m.type_vocab = 1;
  m.num_layers = 0;
  m.d_model = 1;
  m.num_heads = 1;
  m.d_ff = 1;
  m.heads = {};
  Model<double> model(m);
  auto& params = model.params();
  const int tok = params.layout().token_emb;
  const int gain = params.layout().emb_norm_g;
  params[tok](0, 0) = 2.0;
  params[gain](0, 0) = 1.0;
  Gradients<double> g(params.shared_layout());
  g[tok](0, 0) = 0.5;
  g[gain](0, 0) = -0.25;
  AdamState<double> state(params.shared_layout());
  OptimizerConfig cfg;
  cfg.weight_decay = 0.1;
  cfg.clip_norm = 100.0;
  const double lr = 0.01;
  const double norm = optimizer_step(params, state, g, lr, cfg);
  CHECK(norm == doctest::Approx(std::sqrt(0.25 + 0.0625)));
  // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  const double upd_tok = 0.5 / (0.5 + 1e-8);
  CHECK(params[tok](0, 0) == doctest::Approx(2.0 - lr * upd_tok - lr * 0.1 * 2.0).epsilon(1e-12));
  CHECK(params[gain](0, 0) == doctest::Approx(1.0 + lr * 0.25 / (0.25 + 1e-8)).epsilon(1e-12));
  CHECK(state.step == 1);

  g.set_zero();
  g[tok](0, 0) = 30.0;
  g[gain](0, 0) = 40.0;
  Gradients<double> clipped = g;
  CHECK(clip_gradients(clipped, 1.0) == doctest::Approx(50.0));
  CHECK(global_norm(clipped) == doctest::Approx(1.0));
  g[tok](0, 0) = NAN;
  CHECK_THROWS_AS(optimizer_step(params, state, g, lr, cfg), Error);
}

TEST_CASE("pretrain is reproducible and writes its artifacts") {
  const Corpus corpus = generate_synthetic_corpus(tiny_corpus_spec());
  const Vocab vocab = build_vocab(corpus, 1000, 1);
  const RunConfig run = resolve_run_config(tiny_run(), vocab);
  CHECK(run.model.vocab_size == static_cast<int>(vocab.size()));
  const auto dir = std::filesystem::temp_directory_path() / "jmsi_pretrain_test";
  std::filesystem::remove_all(dir);
  PretrainOptions options;
  options.out_dir = dir;
  const PretrainResult a = pretrain(run, corpus, vocab, options);
  const PretrainResult b = pretrain(run, corpus, vocab);
  REQUIRE(a.log.size() == 6);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].step == static_cast<std::int64_t>(i + 1));
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].loss == doctest::Approx(a.log[i].mlm_loss + a.log[i].mspp_loss));
  }
  CHECK(std::filesystem::exists(dir / "checkpoints" / "step_0.jmsc"));
  CHECK(std::filesystem::exists(dir / "checkpoints" / "step_6.jmsc"));
  std::ifstream metrics(dir / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(metrics, line);) ++lines;
  CHECK(lines == 6);

  RunConfig other = run;
  other.seed = 6;
  CHECK(pretrain(other, corpus, vocab).log[0].loss != a.log[0].loss);
  std::filesystem::remove_all(dir);
}

TEST_CASE("vocab size smaller than the vocabulary is rejected") {
  const Vocab vocab({"a", "b", "c"});
  RunConfig run = tiny_run();
  run.model.vocab_size = 4;
  CHECK_THROWS_AS(resolve_run_config(run, vocab), Error);
}

TEST_CASE("finetune keeps the best epoch and stops on patience") {
  const SyntheticCorpusSpec spec = tiny_corpus_spec();
  const Corpus corpus = generate_synthetic_corpus(spec);
  const Vocab vocab = build_vocab(corpus, 1000, 1);
  RunConfig run = resolve_run_config(tiny_run(), vocab);
  run.max_epochs = 4;
  const auto train = build_bundles(generate_synthetic_as2({1, 12, 5}, spec), 5, OverflowPolicy::kTruncate);
  const auto dev = build_bundles(generate_synthetic_as2({2, 12, 5}, spec), 5, OverflowPolicy::kTruncate);
  const Model<float> init = init_model<float>(run.model, 3);
  const FinetuneResult r = finetune(run, train, dev, vocab, init);
  REQUIRE_FALSE(r.history.empty());
  CHECK(r.history.size() <= 4);
  double best = -1.0;
  for (const auto& e : r.history) best = std::max(best, e.dev_metric);
  CHECK(r.best_metric == best);
  CHECK(r.history[r.best_epoch - 1].dev_metric == best);
  const EvalReport again = evaluate_bundles(r.best_model, run.finetune_head, dev, run.pack, vocab);
  CHECK(again.map == doctest::Approx(best).epsilon(1e-12));

  RunConfig mismatch = run;
  mismatch.early_stopping = EarlyStopMetric::kDevAccuracy;
  CHECK_THROWS_AS(finetune(mismatch, train, dev, vocab, init), Error);
}

TEST_CASE("prepare_finetune_model attaches a fresh head") {
  RunConfig run = tiny_run();
  run.model.vocab_size = 30;
  run.model.heads = {HeadKind::kIEk};
  const Model<float> pretrained = init_model<float>(run.model, 1);
  run.finetune_head = HeadKind::kAE1;
  const Model<float> ft = prepare_finetune_model(run, pretrained);
  REQUIRE(ft.has_head(HeadKind::kAE1));
  CHECK(ft.config().num_classes == 3);
  const int tok = ft.layout().token_emb;
  CHECK(ft.params()[tok] == pretrained.params()[pretrained.layout().token_emb]);
  run.finetune_head = HeadKind::kIEk;
  const Model<float> same = prepare_finetune_model(run, pretrained);
  CHECK(std::equal(same.params().values().begin(), same.params().values().end(),
                   pretrained.params().values().begin()));
}

}  // TEST_SUITE
}  // namespace
}  // namespace jmsi
