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

#include <sstream>

#include "doctest.h"
#include "grad_check.h"
#include "oracles.h"
#include "jmsi/checkpoint.h"
#include "jmsi/config.h"
#include "jmsi/error.h"
#include "jmsi/model.h"
#include "jmsi/packing.h"

namespace jmsi {
namespace {

ModelConfig tiny() {
  ModelConfig m;
  m.vocab_size = 20;
  m.max_positions = 40;
  m.type_vocab = 4;
  m.num_layers = 2;
  m.d_model = 8;
  m.num_heads = 2;
  m.d_ff = 16;
  m.dropout = 0.1;
  m.heads = {HeadKind::kIEk, HeadKind::kAEk, HeadKind::kIE1, HeadKind::kAE1};
  return m;
}

Vocab tiny_vocab() {
  std::vector<std::string> words;
  for (int i = kNumReserved; i < 20; ++i) words.push_back("w" + std::to_string(i));
  return Vocab(words);
}

PackedBatch tiny_batch(std::vector<std::vector<std::vector<TokenId>>> examples, const PackConfig& cfg) {
  std::vector<PackedInput> inputs;
  const Vocab v = tiny_vocab();
  for (auto& slots : examples) inputs.push_back(pack_example(slots, cfg, v));
  return collate(inputs);
}

TEST_SUITE("model") {

TEST_CASE("parameter counts match the closed form") {
  CHECK(count_parameters(tiny(), false) == testing::analytic_encoder_params(tiny()));
  const ModelConfig base = model_preset("roberta-base-shape");
  CHECK(count_parameters(base, false) == testing::analytic_encoder_params(base));
  CHECK(count_parameters(base, false) == 124055040u);
  const ModelConfig joint = model_preset("joint-base-shape");
  CHECK(count_parameters(joint, false) == testing::analytic_encoder_params(joint));
  ModelConfig with_head = tiny();
  with_head.heads = {HeadKind::kAEk};
  with_head.num_classes = 3;
  CHECK(count_parameters(with_head, true) ==
        testing::analytic_encoder_params(with_head) + 20 + (2 * 8 * 3 + 3));
}

TEST_CASE("layout names and decay flags") {
  const ParamLayout layout = make_layout(tiny());
  CHECK(layout.find("embeddings.token") == layout.token_emb);
  CHECK(layout.find("layer.1.ffn.out.weight") >= 0);
  CHECK(layout.find("nope") == -1);
  CHECK(layout.specs[layout.token_emb].decay);
  CHECK_FALSE(layout.specs[layout.emb_norm_g].decay);
  CHECK_FALSE(layout.specs[layout.mlm_bias].decay);
  CHECK(layout.heads.size() == 4);
  ModelConfig bad = tiny();
  bad.num_heads = 3;
  CHECK_THROWS_AS(make_layout(bad), Error);
}

TEST_CASE("forward shapes and head outputs") {
  const Model<float> model = init_model<float>(tiny(), 1);
  const PackConfig cfg{5, 3};
  const PackedBatch batch = tiny_batch(
      {{{5, 6}, {7}, {8, 9, 10}, {}}, {{11}, {12}, {13}, {14}}}, cfg);
  const auto out = forward(model, batch, false);
  REQUIRE(out.hidden.size() == 2);
  CHECK(out.hidden[0].rows() == 20);
  CHECK(out.hidden[0].cols() == 8);
  CHECK(out.sentence_embeddings[1].rows() == 4);
  CHECK(out.token_logits[0].rows() == 20);
  CHECK(out.token_logits[0].cols() == 20);
  CHECK(out.sentence_embeddings[0].row(2).isApprox(out.hidden[0].row(10)));
  CHECK(apply_head(model, HeadKind::kIEk, out).rows[0].rows() == 3);
  CHECK(apply_head(model, HeadKind::kAEk, out).rows[1].rows() == 3);
  CHECK(apply_head(model, HeadKind::kIE1, out).rows[0].rows() == 1);
  CHECK(apply_head(model, HeadKind::kAE1, out).rows[0].rows() == 1);
}

TEST_CASE("padding content does not leak into valid positions") {
  const Model<double> model = init_model<double>(tiny(), 2);
  const PackConfig cfg{6, 2};
  PackedBatch a = tiny_batch({{{5, 6}, {7}, {8}}}, cfg);
  PackedBatch b = a;
  for (std::size_t i = 0; i < b.token_ids.size(); ++i) {
    if (b.attention_mask[i] == 0) b.token_ids[i] = 15;
  }
  const auto oa = forward(model, a, false);
  const auto ob = forward(model, b, false);
  for (std::size_t i = 0; i < a.attention_mask.size(); ++i) {
    if (a.attention_mask[i] == 0) continue;
    CHECK((oa.hidden[0].row(i) - ob.hidden[0].row(i)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("dropout is active only in train mode and is seeded") {
  const Model<float> model = init_model<float>(tiny(), 3);
  const PackedBatch batch = tiny_batch({{{5, 6}, {7}, {8}}}, PackConfig{4, 2});
  ForwardOptions train;
  train.train_mode = true;
  train.dropout_seed = 9;
  const auto e1 = forward(model, batch, false);
  const auto e2 = forward(model, batch, false);
  CHECK(e1.hidden[0] == e2.hidden[0]);
  const auto t1 = forward(model, batch, train);
  const auto t2 = forward(model, batch, train);
  CHECK(t1.hidden[0] == t2.hidden[0]);
  CHECK_FALSE(t1.hidden[0].isApprox(e1.hidden[0]));
  train.dropout_seed = 10;
  CHECK_FALSE(forward(model, batch, train).hidden[0].isApprox(t1.hidden[0]));
}

TEST_CASE("batched forward equals per-example forward") {
  const Model<double> model = init_model<double>(tiny(), 4);
  const PackConfig cfg{4, 2};
  const PackedBatch both = tiny_batch({{{5}, {6, 7}, {8}}, {{9, 10}, {11}, {}}}, cfg);
  const PackedBatch second = tiny_batch({{{9, 10}, {11}, {}}}, cfg);
  const auto ob = forward(model, both, false);
  const auto os = forward(model, second, false);
  CHECK((ob.hidden[1] - os.hidden[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient check on a small configuration") {
  const auto cases = testing::grad_check_cases();
  const auto r = testing::run_grad_check(cases[0]);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("copy, cast and checkpoint round trip") {
  const Model<float> model = init_model<float>(tiny(), 5);
  std::stringstream buf;
  AdamState<float> state(model.params().shared_layout());
  state.step = 7;
  state.m.values()[3] = 0.5f;
  write_checkpoint(buf, model, &state);
  const Checkpoint back = read_checkpoint(buf);
  CHECK(back.model.config() == model.config());
  CHECK(std::equal(back.model.params().values().begin(), back.model.params().values().end(),
                   model.params().values().begin()));
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == 7);
  CHECK(back.optimizer->m.values()[3] == 0.5f);

  const Model<double> wide = cast_model<double>(model);
  CHECK(wide.params().values()[10] == static_cast<double>(model.params().values()[10]));

  ModelConfig other = tiny();
  other.heads = {HeadKind::kIEk};
  other.num_classes = 3;
  Model<float> dst(other);
  const int copied = copy_matching_parameters(dst, model);
  CHECK(copied == static_cast<int>(dst.layout().specs.size()) - 2);

  std::stringstream corrupt(buf.str().substr(0, 10));
  CHECK_THROWS_AS(read_checkpoint(corrupt), Error);
}

}  // TEST_SUITE
}  // namespace
}  // namespace jmsi
