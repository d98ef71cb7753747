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

#ifndef JMSI_SAMPLER_H_
#define JMSI_SAMPLER_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jmsi/corpus.h"
#include "jmsi/tokenizer.h"

namespace jmsi {

// k1 same-paragraph positives, k2 same-document hard negatives, k3
// other-document easy negatives.
struct SamplerConfig {
  int k1 = 1;
  int k2 = 2;
  int k3 = 2;
  bool shuffle_candidates = true;

  int k() const { return k1 + k2 + k3; }
  void validate() const;
};

struct MsppExample {
  Sentence s0;
  std::vector<Sentence> candidates;
  // labels[i] == 1 iff candidates[i] shares s0's document and paragraph.
  std::vector<int> labels;

  bool operator==(const MsppExample&) const = default;
};

// Precomputes the eligible anchor set for one corpus and config. Holds a
// reference to the corpus, which must outlive the sampler.
class MsppSampler {
 public:
  // Throws a data error when no sentence can anchor a (k1, k2, k3) example.
  MsppSampler(const Corpus& corpus, SamplerConfig cfg);

  MsppExample sample(std::uint64_t seed) const;

  const std::vector<std::size_t>& eligible_anchors() const { return anchors_; }
  const SamplerConfig& config() const { return cfg_; }

 private:
  const Corpus* corpus_;
  SamplerConfig cfg_;
  std::vector<std::size_t> anchors_;
};

MsppExample sample_mspp_example(const Corpus& corpus, const SamplerConfig& cfg,
                                std::uint64_t seed);

// Seed of the index-th example of a stream.
inline std::uint64_t example_seed(std::uint64_t stream_seed,
                                  std::uint64_t index) {
  return stream_seed ^ index;
}

inline constexpr TokenId kIgnore = -1;

struct MaskedSequence {
  std::vector<TokenId> input_ids;
  // Original id at positions selected for prediction, kIgnore elsewhere.
  std::vector<TokenId> mlm_labels;
};

// BERT-style masking: each non-reserved position is selected with
// probability mask_prob; selected positions become [MASK] 80% of the time, a
// random non-reserved id 10% and stay unchanged 10%.
MaskedSequence apply_mlm_masking(std::span<const TokenId> ids,
                                 const Vocab& vocab, double mask_prob,
                                 std::uint64_t seed);

enum class VerificationLabel { kSupports = 0, kRefutes = 1, kNotEnoughInfo = 2 };

inline constexpr int kNumVerificationClasses = 3;

std::string_view verification_label_name(VerificationLabel label);
VerificationLabel parse_verification_label(std::string_view name);

// A query (question or claim) with up to k candidates (answers or evidences).
// AS2 bundles carry per-candidate gold labels; verification bundles carry a
// single class label.
struct CandidateBundle {
  std::string bundle_id;
  std::string query;
  std::vector<std::string> candidates;
  std::vector<int> gold;
  std::optional<VerificationLabel> label;

  bool is_verification() const { return label.has_value(); }
};

struct As2Row {
  std::string question;
  std::string candidate;
  int label = 0;
};

struct VerificationRecord {
  std::string claim;
  std::vector<std::string> evidences;
  VerificationLabel label = VerificationLabel::kNotEnoughInfo;
};

enum class OverflowPolicy { kTruncate, kSplit };

OverflowPolicy parse_overflow_policy(std::string_view name);

// TSV with columns question, candidate, label; an optional header row is
// skipped. Rows of one question must be contiguous.
std::vector<As2Row> read_as2_tsv(std::istream& in);
void write_as2_tsv(const std::vector<As2Row>& rows, std::ostream& out);
std::vector<VerificationRecord> read_verification_jsonl(std::istream& in);
void write_verification_jsonl(const std::vector<VerificationRecord>& records,
                              std::ostream& out);

// Groups contiguous rows by question. Bundles keep source order and hold at
// most k candidates; overflow is truncated or split into further bundles
// with the same query.
std::vector<CandidateBundle> build_bundles(const std::vector<As2Row>& rows,
                                           int k, OverflowPolicy policy);
std::vector<CandidateBundle> build_bundles(
    const std::vector<VerificationRecord>& records, int k,
    OverflowPolicy policy);

// MSPP example shards, one JSON object per line.
void write_mspp_jsonl(const std::vector<MsppExample>& examples,
                      std::ostream& out);
std::vector<MsppExample> read_mspp_jsonl(std::istream& in);

// Synthetic AS2 data over the synthetic corpus lexicon: every question names
// a topic word; exactly one candidate shares it and the others carry
// distinct different topics, in random order.
struct SyntheticAs2Spec {
  std::uint64_t seed = 0;
  int n_queries = 100;
  int n_candidates = 5;
};

std::vector<As2Row> generate_synthetic_as2(const SyntheticAs2Spec& spec,
                                           const SyntheticCorpusSpec& lexicon);

// Synthetic claims: SUPPORTS when an evidence shares the claim topic,
// REFUTES when that evidence additionally contains the word "not", and
// NOT ENOUGH INFO when no evidence shares the topic.
std::vector<VerificationRecord> generate_synthetic_verification(
    const SyntheticAs2Spec& spec, const SyntheticCorpusSpec& lexicon);

}  // namespace jmsi

#endif  // JMSI_SAMPLER_H_
