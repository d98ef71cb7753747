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

#include "jmsi/model.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "jmsi/error.h"
#include "jmsi/parallel.h"
#include "jmsi/random.h"

namespace jmsi {

std::string_view head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kIE1:
      return "IE1";
    case HeadKind::kAE1:
      return "AE1";
    case HeadKind::kIEk:
      return "IEk";
    case HeadKind::kAEk:
      return "AEk";
  }
  return "";
}

HeadKind parse_head_kind(std::string_view name) {
  for (HeadKind k : {HeadKind::kIE1, HeadKind::kAE1, HeadKind::kIEk, HeadKind::kAEk}) {
    if (name == head_kind_name(k)) return k;
  }
  usage_error("unknown head kind '" + std::string(name) +
              "' (expected IE1, AE1, IEk or AEk)");
}

void ModelConfig::validate() const {
  if (vocab_size < 1 || max_positions < 1 || type_vocab < 1 || num_layers < 0 ||
      d_model < 1 || num_heads < 1 || d_ff < 1 || num_classes < 1) {
    usage_error("model config sizes must be positive");
  }
  if (d_model % num_heads != 0) {
    usage_error("d_model (" + std::to_string(d_model) +
                ") must be divisible by num_heads (" +
                std::to_string(num_heads) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) usage_error("dropout must be in [0, 1)");
  if (!(layer_norm_eps > 0.0)) usage_error("layer_norm_eps must be positive");
}

int ParamLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

ParamLayout make_layout(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  auto add = [&](std::string name, int rows, int cols, bool decay) {
    layout.specs.push_back(ParamSpec{std::move(name), rows, cols, layout.total, decay});
    layout.total += layout.specs.back().size();
    return static_cast<int>(layout.specs.size() - 1);
  };
  const int d = cfg.d_model;
  layout.token_emb = add("embeddings.token", cfg.vocab_size, d, true);
  layout.position_emb = add("embeddings.position", cfg.max_positions, d, true);
  layout.type_emb = add("embeddings.type", cfg.type_vocab, d, true);
  layout.emb_norm_g = add("embeddings.norm.gain", 1, d, false);
  layout.emb_norm_b = add("embeddings.norm.bias", 1, d, false);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    LayerParamIds ids;
    ids.query_w = add(p + "attention.query.weight", d, d, true);
    ids.query_b = add(p + "attention.query.bias", 1, d, false);
    ids.key_w = add(p + "attention.key.weight", d, d, true);
    ids.key_b = add(p + "attention.key.bias", 1, d, false);
    ids.value_w = add(p + "attention.value.weight", d, d, true);
    ids.value_b = add(p + "attention.value.bias", 1, d, false);
    ids.output_w = add(p + "attention.output.weight", d, d, true);
    ids.output_b = add(p + "attention.output.bias", 1, d, false);
    ids.attn_norm_g = add(p + "attention.norm.gain", 1, d, false);
    ids.attn_norm_b = add(p + "attention.norm.bias", 1, d, false);
    ids.ffn_in_w = add(p + "ffn.in.weight", d, cfg.d_ff, true);
    ids.ffn_in_b = add(p + "ffn.in.bias", 1, cfg.d_ff, false);
    ids.ffn_out_w = add(p + "ffn.out.weight", cfg.d_ff, d, true);
    ids.ffn_out_b = add(p + "ffn.out.bias", 1, d, false);
    ids.ffn_norm_g = add(p + "ffn.norm.gain", 1, d, false);
    ids.ffn_norm_b = add(p + "ffn.norm.bias", 1, d, false);
    layout.layers.push_back(ids);
  }
  layout.mlm_bias = add("mlm.bias", 1, cfg.vocab_size, false);
  const std::set<HeadKind> kinds(cfg.heads.begin(), cfg.heads.end());
  for (HeadKind kind : kinds) {
    const std::string p = "head." + std::string(head_kind_name(kind)) + ".";
    const int in = kind == HeadKind::kAEk ? 2 * d : d;
    HeadParamIds ids;
    ids.weight = add(p + "weight", in, cfg.num_classes, true);
    ids.bias = add(p + "bias", 1, cfg.num_classes, false);
    layout.heads.emplace(kind, ids);
  }
  return layout;
}

namespace {

std::size_t count_from_layout(const ParamLayout& layout, bool include_heads) {
  if (include_heads) return layout.total;
  return layout.specs[layout.mlm_bias].offset;
}

}  // namespace

std::size_t count_parameters(const ModelConfig& cfg, bool include_heads) {
  return count_from_layout(make_layout(cfg), include_heads);
}

template <typename T>
ParamSet<T>& ParamSet<T>::operator+=(const ParamSet& other) {
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

template <typename T>
ParamSet<T>& ParamSet<T>::operator*=(T scale) {
  for (auto& v : values_) v *= scale;
  return *this;
}

template <typename T>
int ParamSet<T>::checked_find(std::string_view name) const {
  const int id = layout_->find(name);
  if (id < 0) usage_error("no parameter named '" + std::string(name) + "'");
  return id;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg)
    : cfg_(cfg),
      params_(std::make_shared<const ParamLayout>(make_layout(cfg))) {}

template <typename T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model<T> model(cfg);
  Rng rng(seed);
  auto& params = model.params();
  const auto& layout = model.layout();
  for (std::size_t i = 0; i < layout.specs.size(); ++i) {
    const auto& spec = layout.specs[i];
    auto values = params.values().subspan(spec.offset, spec.size());
    const bool is_gain = spec.name.ends_with(".gain");
    const bool is_bias = spec.name.ends_with(".bias");
    for (auto& v : values) {
      v = is_gain ? T(1) : is_bias ? T(0) : static_cast<T>(rng.truncated_normal(0.02));
    }
  }
  return model;
}

template <typename T>
std::size_t count_parameters(const Model<T>& model, bool include_heads) {
  return count_from_layout(model.layout(), include_heads);
}

template <typename T>
int copy_matching_parameters(Model<T>& dst, const Model<T>& src) {
  int copied = 0;
  const auto& dl = dst.layout();
  const auto& sl = src.layout();
  for (std::size_t i = 0; i < dl.specs.size(); ++i) {
    const int j = sl.find(dl.specs[i].name);
    if (j < 0 || sl.specs[j].rows != dl.specs[i].rows ||
        sl.specs[j].cols != dl.specs[i].cols) {
      continue;
    }
    dst.params()[static_cast<int>(i)] = src.params()[j];
    ++copied;
  }
  return copied;
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model) {
  Model<To> out(model.config());
  auto src = model.params().values();
  auto dst = out.params().values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Eigen::Map<const Matrix<T>>& gain,
                     const Eigen::Map<const Matrix<T>>& bias, T eps,
                     Matrix<T>& xhat, Vec<T>& rstd) {
  const Eigen::Index n = x.rows();
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    xhat.row(i) = x.row(i).array() - mean;
    const T var = xhat.row(i).squaredNorm() / static_cast<T>(x.cols());
    rstd(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) *= rstd(i);
  }
  Matrix<T> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat,
                              const Vec<T>& rstd,
                              const Eigen::Map<const Matrix<T>>& gain,
                              Eigen::Map<Matrix<T>> d_gain,
                              Eigen::Map<Matrix<T>> d_bias) {
  d_gain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_bias.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T mean_dxhat = dxhat.row(i).sum() * inv_d;
    const T mean_dot = dxhat.row(i).dot(xhat.row(i)) * inv_d;
    dx.row(i) = rstd(i) * (dxhat.row(i).array() - mean_dxhat -
                           xhat.row(i).array() * mean_dot).matrix();
  }
  return dx;
}

// Inverted-dropout scales (0 or 1/(1-p)); empty when dropout is off.
template <typename T>
Matrix<T> dropout_mask(Rng* rng, Eigen::Index rows, Eigen::Index cols, double p) {
  if (rng == nullptr || p <= 0.0) return {};
  Matrix<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng->uniform() < p ? T(0) : keep_scale;
  }
  return mask;
}

template <typename T>
void apply_mask(Matrix<T>& x, const Matrix<T>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

template <typename T>
void add_bias(Matrix<T>& x, const Eigen::Map<const Matrix<T>>& bias) {
  x.rowwise() += bias.row(0);
}

template <typename T>
void forward_example(const Model<T>& model, const PackedBatch& batch, int b,
                     const ForwardOptions& options, ForwardOutput<T>& out) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& layout = model.layout();
  const auto& P = model.params();
  const int n = batch.cfg.total_len();
  const int d = cfg.d_model;
  const int heads = cfg.num_heads;
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T eps = static_cast<T>(cfg.layer_norm_eps);

  Rng rng(derive_seed(options.dropout_seed, static_cast<std::uint64_t>(b)));
  Rng* drop_rng = options.train_mode ? &rng : nullptr;

  ExampleCache<T> cache;
  const auto tokens = batch.row(batch.token_ids, b);
  const auto types = batch.row(batch.type_ids, b);
  const auto positions = batch.row(batch.position_ids, b);
  const auto mask = batch.row(batch.attention_mask, b);
  for (int i = 0; i < n; ++i) {
    if (mask[i] != 0) cache.valid_keys.push_back(i);
  }

  Matrix<T> x(n, d);
  {
    const auto tok = P[layout.token_emb];
    const auto pos = P[layout.position_emb];
    const auto typ = P[layout.type_emb];
    for (int i = 0; i < n; ++i) {
      x.row(i) = tok.row(tokens[i]) + pos.row(positions[i]) + typ.row(types[i]);
    }
  }
  x = layer_norm(x, P[layout.emb_norm_g], P[layout.emb_norm_b], eps,
                 cache.emb_xhat, cache.emb_rstd);
  cache.emb_drop = dropout_mask<T>(drop_rng, n, d, cfg.dropout);
  apply_mask(x, cache.emb_drop);

  for (const LayerParamIds& ids : layout.layers) {
    LayerCache<T> lc;
    lc.input = x;
    lc.query.noalias() = x * P[ids.query_w];
    add_bias(lc.query, P[ids.query_b]);
    lc.key.noalias() = x * P[ids.key_w];
    add_bias(lc.key, P[ids.key_b]);
    lc.value.noalias() = x * P[ids.value_w];
    add_bias(lc.value, P[ids.value_b]);

    lc.context.resize(n, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.query.middleCols(h * dh, dh);
      const auto kh = lc.key.middleCols(h * dh, dh);
      const auto vh = lc.value.middleCols(h * dh, dh);
      Matrix<T> scores = (qh * kh.transpose()) * scale;
      Matrix<T> probs = Matrix<T>::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        T max_score = -std::numeric_limits<T>::infinity();
        for (int j : cache.valid_keys) max_score = std::max(max_score, scores(i, j));
        T total = T(0);
        for (int j : cache.valid_keys) {
          probs(i, j) = std::exp(scores(i, j) - max_score);
          total += probs(i, j);
        }
        for (int j : cache.valid_keys) probs(i, j) /= total;
      }
      Matrix<T> drop = dropout_mask<T>(drop_rng, n, n, cfg.dropout);
      if (drop.size() != 0) {
        const Matrix<T> dropped = (probs.array() * drop.array()).matrix();
        lc.context.middleCols(h * dh, dh).noalias() = dropped * vh;
      } else {
        lc.context.middleCols(h * dh, dh).noalias() = probs * vh;
      }
      lc.probs.push_back(std::move(probs));
      lc.attn_drop.push_back(std::move(drop));
    }
    Matrix<T> attn(n, d);
    attn.noalias() = lc.context * P[ids.output_w];
    add_bias(attn, P[ids.output_b]);
    lc.attn_out_drop = dropout_mask<T>(drop_rng, n, d, cfg.dropout);
    apply_mask(attn, lc.attn_out_drop);
    lc.after_attn = layer_norm<T>(x + attn, P[ids.attn_norm_g], P[ids.attn_norm_b],
                                  eps, lc.attn_norm_xhat, lc.attn_norm_rstd);

    lc.ffn_pre.noalias() = lc.after_attn * P[ids.ffn_in_w];
    add_bias(lc.ffn_pre, P[ids.ffn_in_b]);
    lc.ffn_act = lc.ffn_pre.unaryExpr([](T v) { return gelu(v); });
    Matrix<T> ffn(n, d);
    ffn.noalias() = lc.ffn_act * P[ids.ffn_out_w];
    add_bias(ffn, P[ids.ffn_out_b]);
    lc.ffn_drop = dropout_mask<T>(drop_rng, n, d, cfg.dropout);
    apply_mask(ffn, lc.ffn_drop);
    x = layer_norm<T>(lc.after_attn + ffn, P[ids.ffn_norm_g], P[ids.ffn_norm_b],
                      eps, lc.ffn_norm_xhat, lc.ffn_norm_rstd);
    if (options.keep_cache) cache.layers.push_back(std::move(lc));
  }

  Matrix<T> embeddings(batch.cfg.slots(), d);
  for (int s = 0; s < batch.cfg.slots(); ++s) embeddings.row(s) = x.row(s * batch.cfg.L);

  std::vector<int> logit_rows;
  if (options.logits == LogitMode::kAll) {
    for (int i = 0; i < n; ++i) logit_rows.push_back(i);
  } else if (options.logits == LogitMode::kLabeled && batch.has_mlm_labels()) {
    const auto labels = batch.row(batch.mlm_labels, b);
    for (int i = 0; i < n; ++i) {
      if (labels[i] != kIgnore) logit_rows.push_back(i);
    }
  }
  Matrix<T> logits;
  if (!logit_rows.empty()) {
    Matrix<T> selected(logit_rows.size(), d);
    for (std::size_t r = 0; r < logit_rows.size(); ++r) selected.row(r) = x.row(logit_rows[r]);
    logits.noalias() = selected * P[layout.token_emb].transpose();
    add_bias(logits, P[layout.mlm_bias]);
  }

  out.hidden[b] = std::move(x);
  out.sentence_embeddings[b] = std::move(embeddings);
  out.token_logits[b] = std::move(logits);
  out.logit_positions[b] = std::move(logit_rows);
  if (options.keep_cache) {
    cache.token_ids.assign(tokens.begin(), tokens.end());
    cache.type_ids.assign(types.begin(), types.end());
    cache.position_ids.assign(positions.begin(), positions.end());
    out.caches[b] = std::move(cache);
  }
}

template <typename T>
Matrix<T> head_input(HeadKind kind, const Matrix<T>& E) {
  const Eigen::Index k = E.rows() - 1;
  switch (kind) {
    case HeadKind::kIE1:
      return E.topRows(1);
    case HeadKind::kAE1:
      return E.colwise().mean();
    case HeadKind::kIEk:
      return E.bottomRows(k);
    case HeadKind::kAEk: {
      Matrix<T> X(k, 2 * E.cols());
      X.leftCols(E.cols()) = E.topRows(1).replicate(k, 1);
      X.rightCols(E.cols()) = E.bottomRows(k);
      return X;
    }
  }
  return {};
}

// Pulls a head-input adjoint back onto the sentence embeddings.
template <typename T>
void scatter_head_input_grad(HeadKind kind, const Matrix<T>& dX, Matrix<T>& dE) {
  const Eigen::Index k = dE.rows() - 1;
  const Eigen::Index d = dE.cols();
  switch (kind) {
    case HeadKind::kIE1:
      dE.row(0) += dX.row(0);
      break;
    case HeadKind::kAE1:
      dE.rowwise() += dX.row(0) / static_cast<T>(k + 1);
      break;
    case HeadKind::kIEk:
      dE.bottomRows(k) += dX;
      break;
    case HeadKind::kAEk:
      dE.row(0) += dX.leftCols(d).colwise().sum();
      dE.bottomRows(k) += dX.rightCols(d);
      break;
  }
}

template <typename T>
const HeadParamIds& head_ids(const Model<T>& model, HeadKind kind) {
  const auto it = model.layout().heads.find(kind);
  if (it == model.layout().heads.end()) {
    usage_error("model has no " + std::string(head_kind_name(kind)) +
                " head parameters");
  }
  return it->second;
}

template <typename T>
void backward_example(const Model<T>& model, const ExampleCache<T>& cache,
                      Matrix<T> dx, Gradients<T>& g) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& layout = model.layout();
  const auto& P = model.params();
  const int n = static_cast<int>(dx.rows());
  const int d = cfg.d_model;
  const int heads = cfg.num_heads;
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerParamIds& ids = layout.layers[l];
    const LayerCache<T>& lc = cache.layers[l];

    // Output = LN(after_attn + dropout(ffn)).
    Matrix<T> ds = layer_norm_backward<T>(dx, lc.ffn_norm_xhat, lc.ffn_norm_rstd,
                                          P[ids.ffn_norm_g], g[ids.ffn_norm_g],
                                          g[ids.ffn_norm_b]);
    Matrix<T> d_after_attn = ds;
    apply_mask(ds, lc.ffn_drop);
    g[ids.ffn_out_w].noalias() += lc.ffn_act.transpose() * ds;
    g[ids.ffn_out_b].row(0) += ds.colwise().sum();
    Matrix<T> d_act(n, cfg.d_ff);
    d_act.noalias() = ds * P[ids.ffn_out_w].transpose();
    const Matrix<T> d_pre =
        (d_act.array() * lc.ffn_pre.unaryExpr([](T v) { return gelu_grad(v); }).array())
            .matrix();
    g[ids.ffn_in_w].noalias() += lc.after_attn.transpose() * d_pre;
    g[ids.ffn_in_b].row(0) += d_pre.colwise().sum();
    d_after_attn.noalias() += d_pre * P[ids.ffn_in_w].transpose();

    // after_attn = LN(input + dropout(attention)).
    Matrix<T> d_sum = layer_norm_backward<T>(
        d_after_attn, lc.attn_norm_xhat, lc.attn_norm_rstd, P[ids.attn_norm_g],
        g[ids.attn_norm_g], g[ids.attn_norm_b]);
    Matrix<T> d_input = d_sum;
    apply_mask(d_sum, lc.attn_out_drop);
    g[ids.output_w].noalias() += lc.context.transpose() * d_sum;
    g[ids.output_b].row(0) += d_sum.colwise().sum();
    Matrix<T> d_context(n, d);
    d_context.noalias() = d_sum * P[ids.output_w].transpose();

    Matrix<T> dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.query.middleCols(h * dh, dh);
      const auto kh = lc.key.middleCols(h * dh, dh);
      const auto vh = lc.value.middleCols(h * dh, dh);
      const auto dctx = d_context.middleCols(h * dh, dh);
      const Matrix<T>& probs = lc.probs[h];
      const Matrix<T>& drop = lc.attn_drop[h];
      Matrix<T> d_probs(n, n);
      d_probs.noalias() = dctx * vh.transpose();
      if (drop.size() != 0) {
        const Matrix<T> dropped = (probs.array() * drop.array()).matrix();
        dv.middleCols(h * dh, dh).noalias() = dropped.transpose() * dctx;
        d_probs.array() *= drop.array();
      } else {
        dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dctx;
      }
      const Vec<T> row_dot = (d_probs.array() * probs.array()).rowwise().sum();
      Matrix<T> d_scores =
          (probs.array() * (d_probs.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(h * dh, dh).noalias() = d_scores * kh;
      dk.middleCols(h * dh, dh).noalias() = d_scores.transpose() * qh;
    }
    g[ids.query_w].noalias() += lc.input.transpose() * dq;
    g[ids.query_b].row(0) += dq.colwise().sum();
    g[ids.key_w].noalias() += lc.input.transpose() * dk;
    g[ids.key_b].row(0) += dk.colwise().sum();
    g[ids.value_w].noalias() += lc.input.transpose() * dv;
    g[ids.value_b].row(0) += dv.colwise().sum();
    d_input.noalias() += dq * P[ids.query_w].transpose();
    d_input.noalias() += dk * P[ids.key_w].transpose();
    d_input.noalias() += dv * P[ids.value_w].transpose();
    dx = std::move(d_input);
  }

  apply_mask(dx, cache.emb_drop);
  const Matrix<T> de = layer_norm_backward<T>(dx, cache.emb_xhat, cache.emb_rstd,
                                              P[layout.emb_norm_g], g[layout.emb_norm_g],
                                              g[layout.emb_norm_b]);
  auto d_tok = g[layout.token_emb];
  auto d_pos = g[layout.position_emb];
  auto d_typ = g[layout.type_emb];
  for (int i = 0; i < n; ++i) {
    d_tok.row(cache.token_ids[i]) += de.row(i);
    d_pos.row(cache.position_ids[i]) += de.row(i);
    d_typ.row(cache.type_ids[i]) += de.row(i);
  }
}

void validate_batch(const ModelConfig& cfg, const PackedBatch& batch) {
  auto check = [](const std::vector<TokenId>& ids, int limit, const char* what) {
    for (const TokenId id : ids) {
      if (id < 0 || id >= limit) {
        data_error(std::string(what) + " id " + std::to_string(id) +
                   " out of range [0, " + std::to_string(limit) + ")");
      }
    }
  };
  check(batch.token_ids, cfg.vocab_size, "token");
  check(batch.type_ids, cfg.type_vocab, "type");
  check(batch.position_ids, cfg.max_positions, "position");
}

}  // namespace

template <typename T>
ForwardOutput<T> forward(const Model<T>& model, const PackedBatch& batch,
                         const ForwardOptions& options) {
  validate_batch(model.config(), batch);
  ForwardOutput<T> out;
  out.pack = batch.cfg;
  out.batch_size = batch.batch_size;
  out.hidden.resize(batch.batch_size);
  out.sentence_embeddings.resize(batch.batch_size);
  out.token_logits.resize(batch.batch_size);
  out.logit_positions.resize(batch.batch_size);
  if (options.keep_cache) out.caches.resize(batch.batch_size);
  parallel_for(batch.batch_size,
               [&](int b) { forward_example(model, batch, b, options, out); });
  return out;
}

template <typename T>
HeadLogits<T> apply_head(const Model<T>& model, HeadKind kind,
                         const ForwardOutput<T>& out) {
  const HeadParamIds& ids = head_ids(model, kind);
  const auto W = model.params()[ids.weight];
  const auto bias = model.params()[ids.bias];
  HeadLogits<T> logits;
  logits.kind = kind;
  for (const auto& E : out.sentence_embeddings) {
    Matrix<T> y = head_input(kind, E) * W;
    y.rowwise() += bias.row(0);
    logits.rows.push_back(std::move(y));
  }
  return logits;
}

template <typename T>
LossNode<T>& LossNode<T>::operator+=(const LossNode& other) {
  value += other.value;
  for (const auto& [kind, adj] : other.head_adjoints) {
    auto& mine = head_adjoints[kind];
    if (mine.empty()) {
      mine = adj;
    } else {
      for (std::size_t b = 0; b < adj.size(); ++b) mine[b] += adj[b];
    }
  }
  auto merge = [](std::vector<Matrix<T>>& mine, const std::vector<Matrix<T>>& theirs) {
    if (mine.empty()) {
      mine = theirs;
    } else {
      for (std::size_t b = 0; b < theirs.size(); ++b) mine[b] += theirs[b];
    }
  };
  merge(logit_adjoints, other.logit_adjoints);
  merge(embedding_adjoints, other.embedding_adjoints);
  return *this;
}

template <typename T>
LossNode<T> LossNode<T>::scaled(T factor) const {
  LossNode copy = *this;
  copy.value *= factor;
  for (auto& [kind, adj] : copy.head_adjoints) {
    for (auto& m : adj) m *= factor;
  }
  for (auto& m : copy.logit_adjoints) m *= factor;
  for (auto& m : copy.embedding_adjoints) m *= factor;
  return copy;
}

template <typename T>
Gradients<T> compute_gradients(const Model<T>& model, const ForwardOutput<T>& out,
                               const LossNode<T>& loss) {
  if (!std::isfinite(static_cast<double>(loss.value))) {
    numeric_error("non-finite loss value");
  }
  if (out.caches.size() != static_cast<std::size_t>(out.batch_size)) {
    usage_error("compute_gradients needs a forward pass run with keep_cache");
  }
  const auto layout = model.params().shared_layout();
  const ParamLayout& L = *layout;
  const auto& P = model.params();
  const int slots = out.pack.slots();
  const int stride = out.pack.L;

  std::vector<Gradients<T>> per_example(out.batch_size);
  parallel_for(out.batch_size, [&](int b) {
    Gradients<T> g(layout);
    Matrix<T> dE = Matrix<T>::Zero(slots, model.config().d_model);
    for (const auto& [kind, adj] : loss.head_adjoints) {
      if (adj.empty()) continue;
      const HeadParamIds& ids = head_ids(model, kind);
      const Matrix<T> X = head_input(kind, out.sentence_embeddings[b]);
      const Matrix<T>& dY = adj[b];
      g[ids.weight].noalias() += X.transpose() * dY;
      g[ids.bias].row(0) += dY.colwise().sum();
      const Matrix<T> dX = dY * P[ids.weight].transpose();
      scatter_head_input_grad(kind, dX, dE);
    }
    if (!loss.embedding_adjoints.empty()) dE += loss.embedding_adjoints[b];

    Matrix<T> dH = Matrix<T>::Zero(out.hidden[b].rows(), out.hidden[b].cols());
    for (int s = 0; s < slots; ++s) dH.row(s * stride) += dE.row(s);

    if (!loss.logit_adjoints.empty() && loss.logit_adjoints[b].size() != 0) {
      const Matrix<T>& dZ = loss.logit_adjoints[b];
      const auto& rows = out.logit_positions[b];
      Matrix<T> selected(rows.size(), out.hidden[b].cols());
      for (std::size_t r = 0; r < rows.size(); ++r) selected.row(r) = out.hidden[b].row(rows[r]);
      g[L.token_emb].noalias() += dZ.transpose() * selected;
      g[L.mlm_bias].row(0) += dZ.colwise().sum();
      const Matrix<T> d_sel = dZ * P[L.token_emb];
      for (std::size_t r = 0; r < rows.size(); ++r) dH.row(rows[r]) += d_sel.row(r);
    }
    backward_example(model, out.caches[b], std::move(dH), g);
    per_example[b] = std::move(g);
  });

  Gradients<T> total(layout);
  for (const auto& g : per_example) total += g;
  return total;
}

#define JMSI_INSTANTIATE(T)                                                          \
  template class ParamSet<T>;                                                        \
  template class Model<T>;                                                           \
  template struct LossNode<T>;                                                       \
  template Model<T> init_model<T>(const ModelConfig&, std::uint64_t);                \
  template std::size_t count_parameters<T>(const Model<T>&, bool);                   \
  template int copy_matching_parameters<T>(Model<T>&, const Model<T>&);              \
  template ForwardOutput<T> forward<T>(const Model<T>&, const PackedBatch&,          \
                                       const ForwardOptions&);                       \
  template HeadLogits<T> apply_head<T>(const Model<T>&, HeadKind,                    \
                                       const ForwardOutput<T>&);                     \
  template Gradients<T> compute_gradients<T>(const Model<T>&, const ForwardOutput<T>&, \
                                             const LossNode<T>&);

JMSI_INSTANTIATE(float)
JMSI_INSTANTIATE(double)
#undef JMSI_INSTANTIATE

template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);

}  // namespace jmsi
