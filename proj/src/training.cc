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

#include "jmsi/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "jmsi/checkpoint.h"
#include "jmsi/error.h"
#include "jmsi/parallel.h"
#include "jmsi/random.h"

namespace jmsi {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kDropoutStream = 0xd20f;
constexpr std::uint64_t kShuffleStream = 0x5aff;
constexpr std::uint64_t kHeadStream = 0x4ead;

template <typename T>
void require_finite(const Matrix<T>& m, const char* what) {
  if (!m.allFinite()) numeric_error(std::string("non-finite ") + what);
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// -log softmax(z)[label] and softmax(z) for one row.
template <typename Row>
double cross_entropy_row(const Row& z, int label, Eigen::RowVectorXd& probs) {
  const double max_z = z.template cast<double>().maxCoeff();
  probs = (z.template cast<double>().array() - max_z).exp().matrix();
  const double total = probs.sum();
  probs /= total;
  return std::log(total) + max_z - static_cast<double>(z(label));
}

void write_jsonl(std::ofstream* out, const nlohmann::ordered_json& j) {
  if (out != nullptr && out->is_open()) *out << j.dump() << '\n' << std::flush;
}

nlohmann::ordered_json step_json(const StepLog& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["lr"] = s.lr;
  j["losses"] = {{"mlm", s.mlm_loss}, {"mspp", s.mspp_loss}, {"total", s.loss}};
  j["metrics"] = {{"mspp_accuracy", s.mspp_accuracy}, {"grad_norm", s.grad_norm}};
  return j;
}

}  // namespace

template <typename T>
LossNode<T> mspp_loss(const HeadLogits<T>& logits, std::span<const int> labels) {
  LossNode<T> node;
  const std::size_t batch = logits.rows.size();
  if (batch == 0) return node;
  const Eigen::Index k = logits.rows[0].rows();
  if (logits.rows[0].cols() != 1) {
    usage_error("MSPP loss needs a single-output per-candidate head");
  }
  if (labels.size() != batch * static_cast<std::size_t>(k)) {
    usage_error("MSPP loss: labels do not match the logits shape");
  }
  std::size_t valid = 0;
  for (const int y : labels) valid += y >= 0;
  auto& adj = node.head_adjoints[logits.kind];
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix<T>& z = logits.rows[b];
    require_finite(z, "MSPP logits");
    Matrix<T> dz = Matrix<T>::Zero(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < k; ++i) {
      const int y = labels[b * k + i];
      if (y < 0) continue;
      const double x = z(i, 0);
      total += softplus(x) - y * x;
      dz(i, 0) = static_cast<T>((sigmoid(x) - y) / static_cast<double>(valid));
    }
    adj.push_back(std::move(dz));
  }
  node.value = valid == 0 ? T(0) : static_cast<T>(total / static_cast<double>(valid));
  return node;
}

double mspp_loss(std::span<const double> logits, std::span<const int> labels,
                 std::span<const int> valid) {
  if (logits.size() != labels.size() || logits.size() != valid.size()) {
    usage_error("MSPP loss: logits, labels and valid differ in size");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) numeric_error("non-finite MSPP logits");
    if (valid[i] == 0) continue;
    total += softplus(logits[i]) - labels[i] * logits[i];
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

template <typename T>
LossNode<T> mlm_loss(const ForwardOutput<T>& out, const PackedBatch& batch) {
  LossNode<T> node;
  if (!batch.has_mlm_labels()) return node;
  const std::size_t n = batch.cfg.total_len();
  std::size_t count = 0;
  for (int b = 0; b < out.batch_size; ++b) {
    for (const int pos : out.logit_positions[b]) {
      count += batch.mlm_labels[b * n + pos] != kIgnore;
    }
  }
  if (count == 0) return node;
  double total = 0.0;
  Eigen::RowVectorXd probs;
  for (int b = 0; b < out.batch_size; ++b) {
    const Matrix<T>& z = out.token_logits[b];
    require_finite(z, "MLM logits");
    Matrix<T> dz = Matrix<T>::Zero(z.rows(), z.cols());
    const auto& rows = out.logit_positions[b];
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const TokenId label = batch.mlm_labels[b * n + rows[r]];
      if (label == kIgnore) continue;
      total += cross_entropy_row(z.row(r), label, probs);
      probs(label) -= 1.0;
      dz.row(r) = (probs / static_cast<double>(count)).template cast<T>();
    }
    node.logit_adjoints.push_back(std::move(dz));
  }
  node.value = static_cast<T>(total / static_cast<double>(count));
  return node;
}

double mlm_loss(const Matrix<double>& token_logits,
                std::span<const TokenId> mlm_labels) {
  if (static_cast<std::size_t>(token_logits.rows()) != mlm_labels.size()) {
    usage_error("MLM loss: one label per logit row expected");
  }
  require_finite(token_logits, "MLM logits");
  double total = 0.0;
  std::size_t count = 0;
  Eigen::RowVectorXd probs;
  for (std::size_t r = 0; r < mlm_labels.size(); ++r) {
    if (mlm_labels[r] == kIgnore) continue;
    total += cross_entropy_row(token_logits.row(r), mlm_labels[r], probs);
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

template <typename T>
LossNode<T> classification_loss(const HeadLogits<T>& logits,
                                std::span<const int> class_labels) {
  LossNode<T> node;
  if (class_labels.size() != logits.rows.size()) {
    usage_error("classification loss: one class label per example expected");
  }
  std::size_t count = 0;
  for (const int y : class_labels) count += y >= 0;
  auto& adj = node.head_adjoints[logits.kind];
  double total = 0.0;
  Eigen::RowVectorXd probs;
  for (std::size_t b = 0; b < logits.rows.size(); ++b) {
    const Matrix<T>& z = logits.rows[b];
    require_finite(z, "classification logits");
    Matrix<T> dz = Matrix<T>::Zero(z.rows(), z.cols());
    const int y = class_labels[b];
    if (y >= 0) {
      if (y >= z.cols()) usage_error("class label exceeds the head's class count");
      total += cross_entropy_row(z.row(0), y, probs);
      probs(y) -= 1.0;
      dz.row(0) = (probs / static_cast<double>(count)).template cast<T>();
    }
    adj.push_back(std::move(dz));
  }
  node.value = count == 0 ? T(0) : static_cast<T>(total / static_cast<double>(count));
  return node;
}

double lr_at(const ScheduleConfig& schedule, std::int64_t step) {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 0));
  const double warmup = static_cast<double>(schedule.warmup_steps);
  const double total = static_cast<double>(schedule.total_steps);
  if (s <= warmup) return schedule.peak_lr * s / warmup;
  if (s >= total) return 0.0;
  return schedule.peak_lr * (total - s) / (total - warmup);
}

template <typename T>
double global_norm(const Gradients<T>& grads) {
  double sq = 0.0;
  for (const T g : grads.values()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(Gradients<T>& grads, double clip_norm) {
  const double norm = global_norm(grads);
  if (norm > clip_norm) grads *= static_cast<T>(clip_norm / norm);
  return norm;
}

template <typename T>
double optimizer_step(ParamSet<T>& params, AdamState<T>& state, Gradients<T> grads,
                      double lr, const OptimizerConfig& cfg) {
  for (const T g : grads.values()) {
    if (!std::isfinite(static_cast<double>(g))) numeric_error("non-finite gradient");
  }
  if (state.m.size() != params.size()) {
    state = AdamState<T>(params.shared_layout());
  }
  const double norm = clip_gradients(grads, cfg.clip_norm);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto theta = params.values();
  auto m = state.m.values();
  auto v = state.v.values();
  const auto g = grads.values();
  for (const auto& spec : params.layout().specs) {
    const double decay = spec.decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = spec.offset; i < spec.offset + spec.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      const double t = theta[i];
      theta[i] = static_cast<T>(t - lr * update - lr * decay * t);
    }
  }
  return norm;
}

RunConfig resolve_run_config(RunConfig run, const Vocab& vocab) {
  if (run.model.vocab_size == 0) {
    run.model.vocab_size = static_cast<int>(vocab.size());
  } else if (static_cast<std::size_t>(run.model.vocab_size) < vocab.size()) {
    usage_error("model vocab_size " + std::to_string(run.model.vocab_size) +
                " is smaller than the vocabulary (" + std::to_string(vocab.size()) + ")");
  }
  run.validate();
  return run;
}

std::vector<PackedInput> pretrain_batch(const RunConfig& run,
                                        const MsppSampler& sampler,
                                        const Vocab& vocab, std::int64_t step) {
  const std::uint64_t data_seed = derive_seed(run.seed, kDataStream);
  std::vector<PackedInput> inputs(run.batch_size);
  parallel_for(run.batch_size, [&](int b) {
    std::uint64_t index = static_cast<std::uint64_t>(step) * run.batch_size + b;
    if (run.fixed_examples > 0) index %= static_cast<std::uint64_t>(run.fixed_examples);
    const std::uint64_t seed = example_seed(data_seed, index);
    PackedInput packed = pack_mspp_example(sampler.sample(seed), vocab, run.pack);
    mask_packed_input(packed, vocab, run.mask_prob, derive_seed(seed, 1));
    inputs[b] = std::move(packed);
  });
  return inputs;
}

namespace {

double batch_mspp_accuracy(const HeadLogits<float>& logits, std::span<const int> labels,
                           std::size_t& valid) {
  std::size_t correct = 0;
  valid = 0;
  for (std::size_t b = 0; b < logits.rows.size(); ++b) {
    const auto& z = logits.rows[b];
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const int y = labels[b * z.rows() + i];
      if (y < 0) continue;
      ++valid;
      correct += (z(i, 0) > 0.0f) == (y == 1);
    }
  }
  return static_cast<double>(correct);
}

ModelConfig head_config(const ModelConfig& base, HeadKind kind, int num_classes) {
  ModelConfig cfg = base;
  cfg.heads = {kind};
  cfg.num_classes = num_classes;
  return cfg;
}

}  // namespace

double mspp_accuracy(const Model<float>& model, HeadKind kind,
                     std::span<const PackedInput> inputs) {
  std::size_t correct = 0, valid = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const auto chunk = inputs.subspan(start, std::min(kChunk, inputs.size() - start));
    const PackedBatch batch = collate(chunk);
    ForwardOptions options;
    options.logits = LogitMode::kNone;
    const auto out = forward(model, batch, options);
    std::size_t v = 0;
    correct += static_cast<std::size_t>(
        batch_mspp_accuracy(apply_head(model, kind, out), batch.labels, v));
    valid += v;
  }
  return valid == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(valid);
}

PretrainResult pretrain(const RunConfig& run_in, const Corpus& corpus,
                        const Vocab& vocab, const PretrainOptions& options) {
  const RunConfig run = resolve_run_config(run_in, vocab);
  const MsppSampler sampler(corpus, run.sampler);
  const HeadKind head = run.pretrain_head;

  PretrainResult result;
  if (options.init != nullptr) {
    result.model = *options.init;
    if (!result.model.has_head(head) || result.model.config().num_classes != 1) {
      Model<float> with_head = init_model<float>(
          head_config(result.model.config(), head, 1), derive_seed(run.seed, kHeadStream));
      copy_matching_parameters(with_head, result.model);
      result.model = std::move(with_head);
    }
  } else {
    result.model = init_model<float>(head_config(run.model, head, 1),
                                     derive_seed(run.seed, kInitStream));
  }
  Model<float>& model = result.model;
  result.optimizer = AdamState<float>(model.params().shared_layout());

  std::ofstream metrics;
  std::filesystem::path ckpt_dir;
  if (options.out_dir) {
    ckpt_dir = *options.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    metrics.open(*options.out_dir / "metrics.jsonl");
    save_checkpoint(ckpt_dir / "step_0.jmsc", model, &result.optimizer);
  }

  for (std::int64_t step = 0; step < run.pretrain_steps; ++step) {
    const auto inputs = pretrain_batch(run, sampler, vocab, step);
    const PackedBatch batch = collate(inputs);
    ForwardOptions fo;
    fo.train_mode = true;
    fo.logits = LogitMode::kLabeled;
    fo.keep_cache = true;
    fo.dropout_seed = derive_seed(derive_seed(run.seed, kDropoutStream), step);
    const auto out = forward(model, batch, fo);
    const auto logits = apply_head(model, head, out);
    const LossNode<float> mspp = mspp_loss(logits, batch.labels);
    const LossNode<float> mlm = mlm_loss(out, batch);
    LossNode<float> total = mspp.scaled(static_cast<float>(run.mspp_weight));
    total += mlm.scaled(static_cast<float>(run.mlm_weight));
    Gradients<float> grads = compute_gradients(model, out, total);

    StepLog log;
    log.step = step + 1;
    log.lr = lr_at(run.pretrain_schedule, step + 1);
    log.grad_norm = optimizer_step(model.params(), result.optimizer, std::move(grads),
                                   log.lr, run.optimizer);
    log.mlm_loss = mlm.value;
    log.mspp_loss = mspp.value;
    log.loss = total.value;
    std::size_t valid = 0;
    const double correct = batch_mspp_accuracy(logits, batch.labels, valid);
    log.mspp_accuracy = valid == 0 ? 0.0 : correct / static_cast<double>(valid);
    result.log.push_back(log);
    if (options.on_step) options.on_step(log);
    write_jsonl(&metrics, step_json(log));
    const bool last = step + 1 == run.pretrain_steps;
    if (options.out_dir &&
        (last || (run.checkpoint_every > 0 && (step + 1) % run.checkpoint_every == 0))) {
      save_checkpoint(ckpt_dir / ("step_" + std::to_string(step + 1) + ".jmsc"), model,
                      &result.optimizer);
    }
  }
  return result;
}

Model<float> prepare_finetune_model(const RunConfig& run, const Model<float>& init) {
  const HeadKind head = run.finetune_head;
  const int classes = is_per_candidate(head) ? 1 : kNumVerificationClasses;
  if (init.has_head(head) && init.config().num_classes == classes) return init;
  Model<float> model = init_model<float>(head_config(init.config(), head, classes),
                                         derive_seed(run.seed, kHeadStream));
  copy_matching_parameters(model, init);
  return model;
}

EvalReport evaluate_bundles(const Model<float>& model, HeadKind kind,
                            const std::vector<CandidateBundle>& bundles,
                            const PackConfig& cfg, const Vocab& vocab) {
  if (bundles.empty()) data_error("no bundles to evaluate");
  if (is_per_candidate(kind)) {
    std::vector<GradedRanking> graded(bundles.size());
    parallel_for(static_cast<int>(bundles.size()), [&](int i) {
      graded[i] = {rank_bundle(model, kind, bundles[i], cfg, vocab), bundles[i].gold};
    });
    return compute_ranking_metrics(graded);
  }
  std::vector<int> predictions(bundles.size()), golds(bundles.size());
  parallel_for(static_cast<int>(bundles.size()), [&](int i) {
    predictions[i] = predict_class(model, kind, bundles[i], cfg, vocab);
    golds[i] = static_cast<int>(bundles[i].label.value_or(VerificationLabel::kNotEnoughInfo));
  });
  EvalReport report;
  report.n_queries = bundles.size();
  report.label_accuracy = label_accuracy(predictions, golds);
  return report;
}

FinetuneResult finetune(const RunConfig& run_in,
                        const std::vector<CandidateBundle>& train,
                        const std::vector<CandidateBundle>& dev, const Vocab& vocab,
                        const Model<float>& init, const FinetuneOptions& options) {
  const RunConfig run = resolve_run_config(run_in, vocab);
  const HeadKind head = run.finetune_head;
  const bool ranking = is_per_candidate(head);
  if (train.empty() || dev.empty()) data_error("fine-tuning needs train and dev bundles");
  for (const auto* set : {&train, &dev}) {
    for (const auto& b : *set) {
      if (b.is_verification() == ranking) {
        usage_error("task/head mismatch: " + std::string(head_kind_name(head)) +
                    (ranking ? " ranks AS2 bundles" : " classifies verification claims") +
                    " but bundle " + b.bundle_id + " is " +
                    (b.is_verification() ? "a verification claim" : "an AS2 query"));
      }
    }
  }
  if ((run.early_stopping == EarlyStopMetric::kDevMap) != ranking) {
    usage_error("early stopping uses dev-MAP for AS2 heads and dev-accuracy for "
                "verification heads");
  }

  Model<float> model = prepare_finetune_model(run, init);
  AdamState<float> optimizer(model.params().shared_layout());
  const std::int64_t batches_per_epoch =
      (static_cast<std::int64_t>(train.size()) + run.batch_size - 1) / run.batch_size;
  ScheduleConfig schedule = run.finetune_schedule;
  if (schedule.total_steps == 0) schedule.total_steps = run.max_epochs * batches_per_epoch;
  schedule.warmup_steps = std::clamp<std::int64_t>(schedule.warmup_steps, 1, schedule.total_steps);

  std::ofstream metrics;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    metrics.open(*options.out_dir / "finetune_metrics.jsonl");
  }

  FinetuneResult result;
  result.best_model = model;
  result.best_metric = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::int64_t global_step = 0;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= run.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(run.seed, kShuffleStream), epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t start = b * run.batch_size;
      const std::size_t end = std::min(train.size(), start + run.batch_size);
      std::vector<PackedInput> inputs(end - start);
      for (std::size_t i = start; i < end; ++i) {
        inputs[i - start] = pack_bundle(train[order[i]], vocab, run.pack);
      }
      const PackedBatch batch = collate(inputs);
      ForwardOptions fo;
      fo.train_mode = true;
      fo.logits = LogitMode::kNone;
      fo.keep_cache = true;
      fo.dropout_seed = derive_seed(derive_seed(run.seed, kDropoutStream), global_step);
      const auto out = forward(model, batch, fo);
      const auto logits = apply_head(model, head, out);
      const LossNode<float> loss = ranking ? mspp_loss(logits, batch.labels)
                                           : classification_loss(logits, batch.class_labels);
      Gradients<float> grads = compute_gradients(model, out, loss);
      ++global_step;
      optimizer_step(model.params(), optimizer, std::move(grads),
                     lr_at(schedule, global_step), run.optimizer);
      loss_sum += loss.value;
    }

    EpochLog log;
    log.epoch = epoch;
    log.steps = global_step;
    log.train_loss = loss_sum / static_cast<double>(batches_per_epoch);
    log.dev_report = evaluate_bundles(model, head, dev, run.pack, vocab);
    log.dev_metric = ranking ? log.dev_report.map : log.dev_report.label_accuracy.value();
    result.history.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
    nlohmann::ordered_json line;
    line["epoch"] = epoch;
    line["step"] = global_step;
    line["lr"] = lr_at(schedule, global_step);
    line["losses"] = {{"train", log.train_loss}};
    line["metrics"] = to_json(log.dev_report);
    write_jsonl(&metrics, line);

    if (log.dev_metric > result.best_metric) {
      result.best_metric = log.dev_metric;
      result.best_epoch = epoch;
      result.best_model = model;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= run.patience) break;
  }
  if (options.out_dir) save_checkpoint(*options.out_dir / "best.jmsc", result.best_model);
  return result;
}

#define JMSI_INSTANTIATE(T)                                                             \
  template LossNode<T> mspp_loss<T>(const HeadLogits<T>&, std::span<const int>);        \
  template LossNode<T> mlm_loss<T>(const ForwardOutput<T>&, const PackedBatch&);        \
  template LossNode<T> classification_loss<T>(const HeadLogits<T>&, std::span<const int>); \
  template double global_norm<T>(const Gradients<T>&);                                  \
  template double clip_gradients<T>(Gradients<T>&, double);                             \
  template double optimizer_step<T>(ParamSet<T>&, AdamState<T>&, Gradients<T>, double,  \
                                    const OptimizerConfig&);

JMSI_INSTANTIATE(float)
JMSI_INSTANTIATE(double)
#undef JMSI_INSTANTIATE

}  // namespace jmsi
