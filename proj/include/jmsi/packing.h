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

#ifndef JMSI_PACKING_H_
#define JMSI_PACKING_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "jmsi/sampler.h"
#include "jmsi/tokenizer.h"

namespace jmsi {

// k+1 fixed-length slots of L tokens: slot 0 holds the query (or s0), slots
// 1..k the candidates.
struct PackConfig {
  int L = 64;
  int k = 5;

  int slots() const { return k + 1; }
  int total_len() const { return L * (k + 1); }
  void validate() const;

  bool operator==(const PackConfig&) const = default;
};

// Flat joint-encoder input. Every slot is CLS, up to L-2 content tokens, SEP
// and PAD up to L; the slot index is the type id and positions run 0..total-1.
struct PackedInput {
  PackConfig cfg;
  std::vector<TokenId> token_ids;
  std::vector<TokenId> type_ids;
  std::vector<TokenId> position_ids;
  std::vector<TokenId> attention_mask;
  // Empty, or total_len entries with kIgnore at unlabeled positions.
  std::vector<TokenId> mlm_labels;
  std::vector<int> slot_starts;
  // Per-candidate binary labels (k entries); -1 marks a padding slot.
  std::vector<int> labels;
  // Three-way verification class, when the input came from a claim.
  std::optional<int> class_label;

  bool operator==(const PackedInput&) const = default;
};

PackedInput pack_example(std::span<const std::vector<TokenId>> slot_tokens,
                         const PackConfig& cfg, const Vocab& vocab);

// Content tokens of slot i (between its CLS and SEP).
std::vector<TokenId> unpack_slot(const PackedInput& input, int slot);

// MSPP example with labels; slot 0 is s0.
PackedInput pack_mspp_example(const MsppExample& example, const Vocab& vocab,
                              const PackConfig& cfg);

// Bundles with fewer than k candidates get empty slots labelled -1.
PackedInput pack_bundle(const CandidateBundle& bundle, const Vocab& vocab,
                        const PackConfig& cfg);

// Replaces token_ids/mlm_labels with an MLM-masked version.
void mask_packed_input(PackedInput& input, const Vocab& vocab, double mask_prob,
                       std::uint64_t seed);

struct PackedBatch {
  PackConfig cfg;
  int batch_size = 0;
  // Row-major [batch_size, total_len].
  std::vector<TokenId> token_ids;
  std::vector<TokenId> type_ids;
  std::vector<TokenId> position_ids;
  std::vector<TokenId> attention_mask;
  // Empty or [batch_size, total_len].
  std::vector<TokenId> mlm_labels;
  // [batch_size, k], -1 for padding slots.
  std::vector<int> labels;
  // [batch_size], -1 when absent.
  std::vector<int> class_labels;

  std::span<const TokenId> row(const std::vector<TokenId>& field, int b) const {
    const std::size_t n = cfg.total_len();
    return std::span<const TokenId>(field).subspan(b * n, n);
  }
  std::span<const int> row_labels(int b) const {
    return std::span<const int>(labels).subspan(b * cfg.k, cfg.k);
  }
  bool has_mlm_labels() const { return !mlm_labels.empty(); }
};

PackedBatch collate(std::span<const PackedInput> inputs);

// Binary shard: "JMSI", version u32, L u32, k u32, count u64, then per record
// u32 arrays token/type/position/mask/mlm_labels (total_len each) and labels
// (k). All little-endian; kIgnore and -1 are stored as 0xFFFFFFFF.
inline constexpr std::uint32_t kShardVersion = 1;

void write_packed_shard(std::ostream& out, const PackConfig& cfg,
                        std::span<const PackedInput> inputs);
std::vector<PackedInput> read_packed_shard(std::istream& in);

}  // namespace jmsi

#endif  // JMSI_PACKING_H_
