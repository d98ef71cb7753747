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

#include "jmsi/packing.h"

#include <algorithm>
#include <istream>
#include <ostream>

#include "jmsi/binary_io.h"
#include "jmsi/error.h"

namespace jmsi {

void PackConfig::validate() const {
  if (L < 2) usage_error("pack config requires L >= 2");
  if (k < 1) usage_error("pack config requires k >= 1");
}

PackedInput pack_example(std::span<const std::vector<TokenId>> slot_tokens,
                         const PackConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  if (slot_tokens.size() != static_cast<std::size_t>(cfg.slots())) {
    data_error("pack_example expects " + std::to_string(cfg.slots()) +
               " slots, got " + std::to_string(slot_tokens.size()));
  }
  const int n = cfg.total_len();
  PackedInput out;
  out.cfg = cfg;
  out.token_ids.assign(n, kPadId);
  out.type_ids.resize(n);
  out.position_ids.resize(n);
  out.attention_mask.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    out.type_ids[i] = i / cfg.L;
    out.position_ids[i] = i;
  }
  for (int slot = 0; slot < cfg.slots(); ++slot) {
    const int start = slot * cfg.L;
    out.slot_starts.push_back(start);
    const auto& content = slot_tokens[slot];
    const int kept = std::min<int>(static_cast<int>(content.size()), cfg.L - 2);
    int pos = start;
    out.token_ids[pos++] = kClsId;
    for (int t = 0; t < kept; ++t) {
      const TokenId id = content[t];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size() ||
          id == kPadId || id == kClsId || id == kSepId) {
        data_error("slot " + std::to_string(slot) + " holds invalid token id " +
                   std::to_string(id));
      }
      out.token_ids[pos++] = id;
    }
    out.token_ids[pos++] = kSepId;
    std::fill(out.attention_mask.begin() + start, out.attention_mask.begin() + pos, 1);
  }
  return out;
}

std::vector<TokenId> unpack_slot(const PackedInput& input, int slot) {
  const int start = slot * input.cfg.L;
  std::vector<TokenId> content;
  for (int i = start + 1; i < start + input.cfg.L; ++i) {
    if (input.token_ids[i] == kSepId) break;
    content.push_back(input.token_ids[i]);
  }
  return content;
}

PackedInput pack_mspp_example(const MsppExample& example, const Vocab& vocab,
                              const PackConfig& cfg) {
  if (example.candidates.size() != static_cast<std::size_t>(cfg.k)) {
    data_error("MSPP example has " + std::to_string(example.candidates.size()) +
               " candidates but k = " + std::to_string(cfg.k));
  }
  std::vector<std::vector<TokenId>> slots;
  slots.push_back(encode(vocab, example.s0.text));
  for (const auto& c : example.candidates) slots.push_back(encode(vocab, c.text));
  PackedInput packed = pack_example(slots, cfg, vocab);
  packed.labels = example.labels;
  return packed;
}

PackedInput pack_bundle(const CandidateBundle& bundle, const Vocab& vocab,
                        const PackConfig& cfg) {
  if (bundle.candidates.empty() ||
      bundle.candidates.size() > static_cast<std::size_t>(cfg.k)) {
    data_error("bundle " + bundle.bundle_id + " has " +
               std::to_string(bundle.candidates.size()) +
               " candidates; expected 1.." + std::to_string(cfg.k));
  }
  std::vector<std::vector<TokenId>> slots(cfg.slots());
  slots[0] = encode(vocab, bundle.query);
  for (std::size_t i = 0; i < bundle.candidates.size(); ++i) {
    slots[i + 1] = encode(vocab, bundle.candidates[i]);
  }
  PackedInput packed = pack_example(slots, cfg, vocab);
  packed.labels.assign(cfg.k, -1);
  for (std::size_t i = 0; i < bundle.candidates.size(); ++i) {
    packed.labels[i] = i < bundle.gold.size() ? bundle.gold[i] : 0;
  }
  if (bundle.label) packed.class_label = static_cast<int>(*bundle.label);
  return packed;
}

void mask_packed_input(PackedInput& input, const Vocab& vocab, double mask_prob,
                       std::uint64_t seed) {
  MaskedSequence masked =
      apply_mlm_masking(input.token_ids, vocab, mask_prob, seed);
  input.token_ids = std::move(masked.input_ids);
  input.mlm_labels = std::move(masked.mlm_labels);
}

PackedBatch collate(std::span<const PackedInput> inputs) {
  if (inputs.empty()) data_error("cannot collate an empty batch");
  PackedBatch batch;
  batch.cfg = inputs.front().cfg;
  batch.batch_size = static_cast<int>(inputs.size());
  const bool any_mlm = std::any_of(inputs.begin(), inputs.end(), [](const auto& x) {
    return !x.mlm_labels.empty();
  });
  const std::size_t n = batch.cfg.total_len();
  for (const auto& x : inputs) {
    if (!(x.cfg == batch.cfg)) data_error("cannot collate inputs with mixed pack configs");
    auto append = [](std::vector<TokenId>& dst, const std::vector<TokenId>& src) {
      dst.insert(dst.end(), src.begin(), src.end());
    };
    append(batch.token_ids, x.token_ids);
    append(batch.type_ids, x.type_ids);
    append(batch.position_ids, x.position_ids);
    append(batch.attention_mask, x.attention_mask);
    if (any_mlm) {
      if (x.mlm_labels.empty()) {
        batch.mlm_labels.insert(batch.mlm_labels.end(), n, kIgnore);
      } else {
        append(batch.mlm_labels, x.mlm_labels);
      }
    }
    for (int i = 0; i < batch.cfg.k; ++i) {
      batch.labels.push_back(i < static_cast<int>(x.labels.size()) ? x.labels[i] : -1);
    }
    batch.class_labels.push_back(x.class_label.value_or(-1));
  }
  return batch;
}

void write_packed_shard(std::ostream& out, const PackConfig& cfg,
                        std::span<const PackedInput> inputs) {
  out.write("JMSI", 4);
  io::write_le<std::uint32_t>(out, kShardVersion);
  io::write_le<std::uint32_t>(out, cfg.L);
  io::write_le<std::uint32_t>(out, cfg.k);
  io::write_le<std::uint64_t>(out, inputs.size());
  const std::size_t n = cfg.total_len();
  auto put = [&](const auto& values, std::size_t expected) {
    for (std::size_t i = 0; i < expected; ++i) {
      const auto v = i < values.size() ? values[i] : kIgnore;
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
  };
  for (const auto& x : inputs) {
    if (!(x.cfg == cfg)) data_error("shard records must share one pack config");
    put(x.token_ids, n);
    put(x.type_ids, n);
    put(x.position_ids, n);
    put(x.attention_mask, n);
    put(x.mlm_labels, n);
    put(x.labels, cfg.k);
  }
}

std::vector<PackedInput> read_packed_shard(std::istream& in) {
  io::expect_magic(in, "JMSI");
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kShardVersion) {
    data_error("unsupported shard version " + std::to_string(version));
  }
  PackConfig cfg;
  cfg.L = static_cast<int>(io::read_le<std::uint32_t>(in));
  cfg.k = static_cast<int>(io::read_le<std::uint32_t>(in));
  cfg.validate();
  const auto count = io::read_le<std::uint64_t>(in);
  const std::size_t n = cfg.total_len();
  auto get = [&](std::size_t len) {
    std::vector<TokenId> values(len);
    for (auto& v : values) v = static_cast<TokenId>(io::read_le<std::uint32_t>(in));
    return values;
  };
  std::vector<PackedInput> inputs;
  for (std::uint64_t r = 0; r < count; ++r) {
    PackedInput x;
    x.cfg = cfg;
    x.token_ids = get(n);
    x.type_ids = get(n);
    x.position_ids = get(n);
    x.attention_mask = get(n);
    x.mlm_labels = get(n);
    if (std::all_of(x.mlm_labels.begin(), x.mlm_labels.end(),
                    [](TokenId v) { return v == kIgnore; })) {
      x.mlm_labels.clear();
    }
    const auto labels = get(cfg.k);
    x.labels.assign(labels.begin(), labels.end());
    for (int s = 0; s < cfg.slots(); ++s) x.slot_starts.push_back(s * cfg.L);
    inputs.push_back(std::move(x));
  }
  return inputs;
}

}  // namespace jmsi
