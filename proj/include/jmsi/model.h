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

#ifndef JMSI_MODEL_H_
#define JMSI_MODEL_H_

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "jmsi/packing.h"

namespace jmsi {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// IE1: linear on E0. AE1: linear on mean(E0..Ek). IEk: shared linear on each
// candidate Ei. AEk: shared linear on [E0 || Ei].
enum class HeadKind { kIE1, kAE1, kIEk, kAEk };

std::string_view head_kind_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);
inline bool is_per_candidate(HeadKind kind) {
  return kind == HeadKind::kIEk || kind == HeadKind::kAEk;
}

struct ModelConfig {
  int vocab_size = 0;
  int max_positions = 512;
  int type_vocab = 6;
  int num_layers = 2;
  int d_model = 64;
  int num_heads = 4;
  int d_ff = 256;
  double dropout = 0.1;
  int num_classes = 1;
  std::vector<HeadKind> heads = {HeadKind::kIEk};
  double layer_norm_eps = 1e-5;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ParamSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool decay = false;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct LayerParamIds {
  int query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b;
  int attn_norm_g, attn_norm_b;
  int ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  int ffn_norm_g, ffn_norm_b;
};

struct HeadParamIds {
  int weight = -1;
  int bias = -1;
};

// Names, shapes and flat offsets of every parameter; derivable from the
// ModelConfig alone. Weights are stored [in, out] so that y = x W + b.
struct ParamLayout {
  std::vector<ParamSpec> specs;
  std::size_t total = 0;
  int token_emb = -1, position_emb = -1, type_emb = -1;
  int emb_norm_g = -1, emb_norm_b = -1;
  std::vector<LayerParamIds> layers;
  int mlm_bias = -1;
  std::map<HeadKind, HeadParamIds> heads;

  int find(std::string_view name) const;
};

ParamLayout make_layout(const ModelConfig& cfg);

// Embeddings (token, position, type, embedding norm) plus encoder layers;
// include_heads adds the MLM output bias and the prediction heads. The MLM
// projection itself is tied to the token embeddings.
std::size_t count_parameters(const ModelConfig& cfg, bool include_heads);

// A flat parameter-shaped buffer: model weights, gradients, Adam moments.
template <typename T>
class ParamSet {
 public:
  using Map = Eigen::Map<Matrix<T>>;
  using ConstMap = Eigen::Map<const Matrix<T>>;

  ParamSet() = default;
  explicit ParamSet(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(layout_->total, T(0)) {}

  const ParamLayout& layout() const { return *layout_; }
  const std::shared_ptr<const ParamLayout>& shared_layout() const {
    return layout_;
  }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  Map operator[](int id) {
    const auto& s = layout_->specs[id];
    return Map(values_.data() + s.offset, s.rows, s.cols);
  }
  ConstMap operator[](int id) const {
    const auto& s = layout_->specs[id];
    return ConstMap(values_.data() + s.offset, s.rows, s.cols);
  }
  Map operator[](std::string_view name) { return (*this)[checked_find(name)]; }
  ConstMap operator[](std::string_view name) const {
    return (*this)[checked_find(name)];
  }

  void set_zero() { std::fill(values_.begin(), values_.end(), T(0)); }
  ParamSet& operator+=(const ParamSet& other);
  ParamSet& operator*=(T scale);

 private:
  int checked_find(std::string_view name) const;

  std::shared_ptr<const ParamLayout> layout_;
  std::vector<T, Eigen::aligned_allocator<T>> values_;
};

template <typename T>
using Gradients = ParamSet<T>;

template <typename T>
class Model {
 public:
  Model() = default;
  // Zero-initialized parameters; see init_model for random weights.
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return params_.layout(); }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  bool has_head(HeadKind kind) const { return layout().heads.contains(kind); }

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
};

// Truncated-normal(0.02) weights, zero biases, unit normalization gains.
template <typename T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
std::size_t count_parameters(const Model<T>& model, bool include_heads);

// Copies every parameter whose name and shape match; returns the count.
template <typename T>
int copy_matching_parameters(Model<T>& dst, const Model<T>& src);

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model);

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
struct LayerCache {
  Matrix<T> input;
  Matrix<T> query, key, value;
  std::vector<Matrix<T>> probs;      // per head, [n, n]
  std::vector<Matrix<T>> attn_drop;  // per head dropout scales, empty in eval
  Matrix<T> context;
  Matrix<T> attn_out_drop;
  Matrix<T> attn_norm_xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> attn_norm_rstd;
  Matrix<T> after_attn;
  Matrix<T> ffn_pre;
  Matrix<T> ffn_act;
  Matrix<T> ffn_drop;
  Matrix<T> ffn_norm_xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> ffn_norm_rstd;
};

template <typename T>
struct ExampleCache {
  std::vector<TokenId> token_ids, type_ids, position_ids;
  std::vector<int> valid_keys;
  Matrix<T> emb_xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> emb_rstd;
  Matrix<T> emb_drop;
  std::vector<LayerCache<T>> layers;
};

enum class LogitMode { kNone, kLabeled, kAll };

struct ForwardOptions {
  bool train_mode = false;
  LogitMode logits = LogitMode::kAll;
  bool keep_cache = false;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct ForwardOutput {
  PackConfig pack;
  int batch_size = 0;
  // Per example: final hidden states [total_len, d_model].
  std::vector<Matrix<T>> hidden;
  // Per example: E_0..E_k, the hidden states at the slot starts.
  std::vector<Matrix<T>> sentence_embeddings;
  // Per example: MLM logits [rows, vocab] for the positions listed in
  // logit_positions (every position under LogitMode::kAll).
  std::vector<Matrix<T>> token_logits;
  std::vector<std::vector<int>> logit_positions;
  std::vector<ExampleCache<T>> caches;
};

template <typename T>
ForwardOutput<T> forward(const Model<T>& model, const PackedBatch& batch,
                         const ForwardOptions& options);

template <typename T>
ForwardOutput<T> forward(const Model<T>& model, const PackedBatch& batch,
                         bool train_mode) {
  ForwardOptions options;
  options.train_mode = train_mode;
  return forward(model, batch, options);
}

// Per example logits: [1, num_classes] for IE1/AE1, [k, num_classes] for
// IEk/AEk.
template <typename T>
struct HeadLogits {
  HeadKind kind = HeadKind::kIEk;
  std::vector<Matrix<T>> rows;
};

template <typename T>
HeadLogits<T> apply_head(const Model<T>& model, HeadKind kind,
                         const ForwardOutput<T>& out);

// ---------------------------------------------------------------------------
// Backward pass

// A scalar loss together with its adjoints with respect to the model outputs
// it was computed from. Loss functions build these; compute_gradients pulls
// them back to the parameters.
template <typename T>
struct LossNode {
  T value = T(0);
  std::map<HeadKind, std::vector<Matrix<T>>> head_adjoints;
  // Same shapes as ForwardOutput::token_logits, or empty.
  std::vector<Matrix<T>> logit_adjoints;
  // Optional direct adjoints on the sentence embeddings.
  std::vector<Matrix<T>> embedding_adjoints;

  LossNode& operator+=(const LossNode& other);
  LossNode scaled(T factor) const;
};

// Requires `out` produced with keep_cache. Throws a numeric error for a
// non-finite loss value.
template <typename T>
Gradients<T> compute_gradients(const Model<T>& model,
                               const ForwardOutput<T>& out,
                               const LossNode<T>& loss);

}  // namespace jmsi

#endif  // JMSI_MODEL_H_
