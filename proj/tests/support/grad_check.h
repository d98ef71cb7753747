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

#ifndef JMSI_TESTS_GRAD_CHECK_H_
#define JMSI_TESTS_GRAD_CHECK_H_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "jmsi/model.h"
#include "jmsi/packing.h"
#include "jmsi/random.h"
#include "jmsi/training.h"

namespace jmsi::testing {

struct GradCheckCase {
  std::string name;
  ModelConfig model;
  PackConfig pack;
  HeadKind head = HeadKind::kIEk;
  int batch = 2;
  bool with_mlm = true;
  bool train_mode = false;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Random packed batch with random slot lengths, per-candidate labels (some
// padded), class labels and ~30% MLM labels.
inline PackedBatch random_grad_batch(const GradCheckCase& c) {
  Rng rng(c.seed);
  std::vector<std::string> words;
  for (int i = kNumReserved; i < c.model.vocab_size; ++i) words.push_back("v" + std::to_string(i));
  const Vocab vocab(words);
  std::vector<PackedInput> inputs;
  for (int b = 0; b < c.batch; ++b) {
    std::vector<std::vector<TokenId>> slots(c.pack.slots());
    for (auto& slot : slots) {
      const int len = 1 + static_cast<int>(rng.uniform_index(c.pack.L - 2));
      for (int t = 0; t < len; ++t) {
        slot.push_back(kNumReserved +
                       static_cast<TokenId>(rng.uniform_index(c.model.vocab_size - kNumReserved)));
      }
    }
    PackedInput in = pack_example(slots, c.pack, vocab);
    in.labels.assign(c.pack.k, 0);
    for (int i = 0; i < c.pack.k; ++i) {
      in.labels[i] = static_cast<int>(rng.uniform_index(2));
    }
    if (b == 0 && c.pack.k > 1) in.labels[c.pack.k - 1] = -1;
    in.class_label = static_cast<int>(rng.uniform_index(c.model.num_classes));
    if (c.with_mlm) {
      in.mlm_labels.assign(in.token_ids.size(), kIgnore);
      for (std::size_t p = 0; p < in.token_ids.size(); ++p) {
        if (in.attention_mask[p] != 0 && rng.uniform() < 0.3) {
          in.mlm_labels[p] = in.token_ids[p];
          if (rng.uniform() < 0.5) in.token_ids[p] = kMaskId;
        }
      }
    }
    inputs.push_back(std::move(in));
  }
  return collate(inputs);
}

inline LossNode<double> grad_check_loss(const Model<double>& model,
                                        const GradCheckCase& c, const PackedBatch& batch,
                                        ForwardOutput<double>& out) {
  ForwardOptions options;
  options.train_mode = c.train_mode;
  options.logits = LogitMode::kLabeled;
  options.keep_cache = true;
  options.dropout_seed = c.seed + 17;
  out = forward(model, batch, options);
  const HeadLogits<double> logits = apply_head(model, c.head, out);
  LossNode<double> loss = is_per_candidate(c.head)
                              ? mspp_loss(logits, batch.labels)
                              : classification_loss(logits, batch.class_labels);
  if (c.with_mlm) loss += mlm_loss(out, batch);
  return loss;
}

// Central finite differences over every parameter, compared with the
// analytic gradient. Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckResult run_grad_check(const GradCheckCase& c, double step = 1e-5) {
  ModelConfig cfg = c.model;
  cfg.heads = {c.head};
  Model<double> model = init_model<double>(cfg, c.seed);
  // Larger weights than the 0.02 default keep the gradients well above
  // round-off.
  Rng rng(c.seed ^ 0xabcdef);
  for (auto& v : model.params().values()) v += 0.3 * rng.normal();
  const PackedBatch batch = random_grad_batch(c);

  ForwardOutput<double> out;
  const LossNode<double> loss = grad_check_loss(model, c, batch, out);
  const Gradients<double> grads = compute_gradients(model, out, loss);

  GradCheckResult result;
  auto values = model.params().values();
  for (const auto& spec : model.layout().specs) {
    for (std::size_t i = spec.offset; i < spec.offset + spec.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      ForwardOutput<double> tmp;
      const double up = grad_check_loss(model, c, batch, tmp).value;
      values[i] = saved - step;
      const double down = grad_check_loss(model, c, batch, tmp).value;
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grads.values()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = spec.name + "[" + std::to_string(i - spec.offset) + "]";
      }
    }
  }
  return result;
}

inline std::vector<GradCheckCase> grad_check_cases() {
  std::vector<GradCheckCase> cases;
  auto base = [](int layers, int d, int heads, int ff, int vocab) {
    ModelConfig m;
    m.vocab_size = vocab;
    m.max_positions = 32;
    m.type_vocab = 6;
    m.num_layers = layers;
    m.d_model = d;
    m.num_heads = heads;
    m.d_ff = ff;
    m.dropout = 0.0;
    return m;
  };
  {
    GradCheckCase c{"IEk+MLM", base(1, 8, 2, 12, 14), {4, 2}, HeadKind::kIEk};
    c.seed = 101;
    cases.push_back(c);
  }
  {
    GradCheckCase c{"AEk+MLM", base(2, 8, 2, 10, 12), {5, 3}, HeadKind::kAEk};
    c.seed = 202;
    cases.push_back(c);
  }
  {
    GradCheckCase c{"IE1 3-class+MLM", base(1, 6, 3, 8, 11), {4, 3}, HeadKind::kIE1};
    c.model.num_classes = 3;
    c.seed = 303;
    cases.push_back(c);
  }
  {
    GradCheckCase c{"AE1 3-class+MLM", base(2, 8, 4, 8, 13), {3, 2}, HeadKind::kAE1};
    c.model.num_classes = 3;
    c.seed = 404;
    cases.push_back(c);
  }
  {
    GradCheckCase c{"IEk no MLM batch 3", base(2, 4, 1, 6, 9), {4, 4}, HeadKind::kIEk};
    c.batch = 3;
    c.with_mlm = false;
    c.seed = 505;
    cases.push_back(c);
  }
  {
    GradCheckCase c{"AEk+MLM dropout", base(1, 8, 2, 8, 10), {4, 2}, HeadKind::kAEk};
    c.model.dropout = 0.2;
    c.train_mode = true;
    c.seed = 606;
    cases.push_back(c);
  }
  {
    GradCheckCase c{"AE1 binary", base(1, 6, 2, 6, 10), {3, 1}, HeadKind::kAE1};
    c.model.num_classes = 2;
    c.seed = 707;
    cases.push_back(c);
  }
  return cases;
}

}  // namespace jmsi::testing

#endif  // JMSI_TESTS_GRAD_CHECK_H_
