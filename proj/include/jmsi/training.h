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

#ifndef JMSI_TRAINING_H_
#define JMSI_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "jmsi/config.h"
#include "jmsi/corpus.h"
#include "jmsi/evaluation.h"
#include "jmsi/model.h"
#include "jmsi/packing.h"
#include "jmsi/sampler.h"
#include "jmsi/tokenizer.h"

namespace jmsi {

// ---------------------------------------------------------------------------
// Losses. Each returns the scalar value plus its adjoints on the model
// outputs, ready for compute_gradients.

// Mean binary cross-entropy with logits over valid candidate slots.
// `labels` is [batch, k] row-major; entries < 0 are padding and ignored.
template <typename T>
LossNode<T> mspp_loss(const HeadLogits<T>& logits, std::span<const int> labels);

// Scalar form: logits, labels and valid flags share one flat layout.
double mspp_loss(std::span<const double> logits, std::span<const int> labels,
                 std::span<const int> valid);

// Mean cross-entropy over MLM-labelled positions; 0 when there are none.
// `out` must be computed with LogitMode::kLabeled or kAll.
template <typename T>
LossNode<T> mlm_loss(const ForwardOutput<T>& out, const PackedBatch& batch);

// Scalar form over [rows, vocab] logits with one label per row (kIgnore
// skips the row).
double mlm_loss(const Matrix<double>& token_logits,
                std::span<const TokenId> mlm_labels);

// Mean softmax cross-entropy of an IE1/AE1 head against class labels.
template <typename T>
LossNode<T> classification_loss(const HeadLogits<T>& logits,
                                std::span<const int> class_labels);

inline double pretrain_loss(double mlm, double mspp) { return mlm + mspp; }

// ---------------------------------------------------------------------------
// Optimization

double lr_at(const ScheduleConfig& schedule, std::int64_t step);

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  ParamSet<T> m;
  ParamSet<T> v;

  AdamState() = default;
  explicit AdamState(std::shared_ptr<const ParamLayout> layout)
      : m(layout), v(layout) {}
};

template <typename T>
double global_norm(const Gradients<T>& grads);

// Scales grads in place so their global norm is at most clip_norm; returns
// the norm before clipping.
template <typename T>
double clip_gradients(Gradients<T>& grads, double clip_norm);

// Global-norm clipping, Adam with bias correction, then decoupled weight
// decay lr * weight_decay * theta on parameters whose layout marks decay.
// Returns the pre-clip gradient norm.
template <typename T>
double optimizer_step(ParamSet<T>& params, AdamState<T>& state,
                      Gradients<T> grads, double lr, const OptimizerConfig& cfg);

// ---------------------------------------------------------------------------
// Loops

struct StepLog {
  std::int64_t step = 0;
  double lr = 0.0;
  double mlm_loss = 0.0;
  double mspp_loss = 0.0;
  double loss = 0.0;
  double mspp_accuracy = 0.0;
  double grad_norm = 0.0;
};

struct PretrainOptions {
  // When set, receives checkpoints/ and metrics.jsonl.
  std::optional<std::filesystem::path> out_dir;
  // Continue from these weights instead of a fresh initialization.
  const Model<float>* init = nullptr;
  std::function<void(const StepLog&)> on_step;
};

struct PretrainResult {
  Model<float> model;
  AdamState<float> optimizer;
  std::vector<StepLog> log;
};

// The model config's vocab_size is taken from `vocab` when zero.
RunConfig resolve_run_config(RunConfig run, const Vocab& vocab);

// The MSPP+MLM inputs of training step `step` (deterministic in run.seed).
std::vector<PackedInput> pretrain_batch(const RunConfig& run,
                                        const MsppSampler& sampler,
                                        const Vocab& vocab, std::int64_t step);

PretrainResult pretrain(const RunConfig& run, const Corpus& corpus,
                        const Vocab& vocab, const PretrainOptions& options = {});

// Fraction of candidate predictions (logit > 0) matching the MSPP labels.
double mspp_accuracy(const Model<float>& model, HeadKind kind,
                     std::span<const PackedInput> inputs);

struct EpochLog {
  int epoch = 0;
  std::int64_t steps = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
  EvalReport dev_report;
};

struct FinetuneOptions {
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

struct FinetuneResult {
  Model<float> best_model;
  int best_epoch = 0;
  double best_metric = 0.0;
  std::vector<EpochLog> history;
};

// The init model with the fine-tuning head attached: kept when it already
// exists with the right class count, otherwise freshly initialized.
Model<float> prepare_finetune_model(const RunConfig& run,
                                    const Model<float>& init);

// Ranks (AS2) or classifies (verification) every dev bundle.
EvalReport evaluate_bundles(const Model<float>& model, HeadKind kind,
                            const std::vector<CandidateBundle>& bundles,
                            const PackConfig& cfg, const Vocab& vocab);

FinetuneResult finetune(const RunConfig& run,
                        const std::vector<CandidateBundle>& train,
                        const std::vector<CandidateBundle>& dev,
                        const Vocab& vocab, const Model<float>& init,
                        const FinetuneOptions& options = {});

}  // namespace jmsi

#endif  // JMSI_TRAINING_H_
