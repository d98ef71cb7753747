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

#include <set>
#include <sstream>

#include "doctest.h"
#include "jmsi/corpus.h"
#include "jmsi/error.h"
#include "jmsi/random.h"
#include "jmsi/sampler.h"
#include "jmsi/tokenizer.h"

namespace jmsi {
namespace {

SyntheticCorpusSpec lexicon() {
  SyntheticCorpusSpec spec;
  spec.seed = 3;
  spec.n_docs = 20;
  spec.paras_per_doc = 3;
  spec.sents_per_para = 3;
  spec.topic_vocab_size = 12;
  return spec;
}

TEST_SUITE("sampler") {

TEST_CASE("candidates follow provenance and labels match") {
  const Corpus c = generate_synthetic_corpus(lexicon());
  for (const SamplerConfig cfg : {SamplerConfig{1, 2, 2, true}, SamplerConfig{2, 3, 1, false}}) {
    const MsppSampler sampler(c, cfg);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const MsppExample ex = sampler.sample(seed);
      REQUIRE(ex.candidates.size() == static_cast<std::size_t>(cfg.k()));
      int pos = 0, hard = 0, easy = 0;
      std::set<std::size_t> seen{c.flat_index(ex.s0)};
      for (std::size_t i = 0; i < ex.candidates.size(); ++i) {
        const Sentence& s = ex.candidates[i];
        CHECK(seen.insert(c.flat_index(s)).second);
        const bool same_para = s.doc_id == ex.s0.doc_id && s.para_id == ex.s0.para_id;
        CHECK(ex.labels[i] == (same_para ? 1 : 0));
        if (same_para) {
          ++pos;
        } else if (s.doc_id == ex.s0.doc_id) {
          ++hard;
        } else {
          ++easy;
        }
      }
      CHECK(pos == cfg.k1);
      CHECK(hard == cfg.k2);
      CHECK(easy == cfg.k3);
      if (!cfg.shuffle_candidates) CHECK(ex.labels.front() == 1);
    }
    CHECK(sampler.sample(99) == sampler.sample(99));
  }
}

TEST_CASE("ineligible corpora and configs are rejected") {
  const Corpus one_doc({{{"A a.", "B b."}, {"C c."}}});
  CHECK_THROWS_AS(MsppSampler(one_doc, SamplerConfig{1, 1, 1, true}), Error);
  const Corpus c = generate_synthetic_corpus(lexicon());
  CHECK_THROWS_AS(MsppSampler(c, SamplerConfig{0, 2, 2, true}), Error);
  CHECK_THROWS_AS(MsppSampler(c, SamplerConfig{3, 2, 2, true}), Error);
}

TEST_CASE("mlm masking skips reserved tokens and keeps labels") {
  const Vocab v({"a", "b", "c", "d"});
  std::vector<TokenId> ids(4000);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = i % 10 == 0 ? kClsId : static_cast<TokenId>(5 + i % 4);
  }
  const MaskedSequence m = apply_mlm_masking(ids, v, 0.5, 11);
  REQUIRE(m.input_ids.size() == ids.size());
  int selected = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (is_reserved(ids[i])) {
      CHECK(m.mlm_labels[i] == kIgnore);
      CHECK(m.input_ids[i] == ids[i]);
    } else if (m.mlm_labels[i] == kIgnore) {
      CHECK(m.input_ids[i] == ids[i]);
    } else {
      ++selected;
      CHECK(m.mlm_labels[i] == ids[i]);
      CHECK(m.input_ids[i] != kPadId);
    }
  }
  CHECK(selected > 1500);
  CHECK(selected < 2100);
  const MaskedSequence none = apply_mlm_masking(ids, v, 0.0, 11);
  CHECK(none.input_ids == ids);
}

TEST_CASE("as2 tsv parsing and bundling") {
  std::stringstream tsv("question\tcandidate\tlabel\nq1\ta\t0\nq1\tb\t1\nq1\tc\t0\nq2\td\t1\n");
  const auto rows = read_as2_tsv(tsv);
  REQUIRE(rows.size() == 4);
  const auto truncated = build_bundles(rows, 2, OverflowPolicy::kTruncate);
  REQUIRE(truncated.size() == 2);
  CHECK(truncated[0].candidates == std::vector<std::string>{"a", "b"});
  CHECK(truncated[0].gold == std::vector<int>{0, 1});
  CHECK(truncated[1].query == "q2");
  const auto split = build_bundles(rows, 2, OverflowPolicy::kSplit);
  REQUIRE(split.size() == 3);
  CHECK(split[1].candidates == std::vector<std::string>{"c"});
  CHECK(split[1].query == "q1");
  std::stringstream out;
  write_as2_tsv(rows, out);
  CHECK(read_as2_tsv(out).size() == 4);
  std::stringstream bad("q\ta\t2\n");
  CHECK_THROWS_AS(read_as2_tsv(bad), Error);
  std::stringstream short_row("q\ta\n");
  CHECK_THROWS_AS(read_as2_tsv(short_row), Error);
}

TEST_CASE("verification jsonl round trip") {
  std::vector<VerificationRecord> records(2);
  records[0] = {"claim one", {"e1", "e2", "e3"}, VerificationLabel::kRefutes};
  records[1] = {"claim two", {"e4"}, VerificationLabel::kNotEnoughInfo};
  std::stringstream buf;
  write_verification_jsonl(records, buf);
  const auto back = read_verification_jsonl(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].evidences == records[0].evidences);
  CHECK(back[1].label == VerificationLabel::kNotEnoughInfo);
  const auto bundles = build_bundles(back, 2, OverflowPolicy::kSplit);
  REQUIRE(bundles.size() == 3);
  CHECK(bundles[0].is_verification());
  CHECK(*bundles[1].label == VerificationLabel::kRefutes);
  std::stringstream bad("{\"claim\": \"x\", \"evidences\": [], \"label\": \"MAYBE\"}\n");
  CHECK_THROWS_AS(read_verification_jsonl(bad), Error);
}

TEST_CASE("mspp jsonl round trip") {
  const Corpus c = generate_synthetic_corpus(lexicon());
  const MsppSampler sampler(c, SamplerConfig{});
  std::vector<MsppExample> examples{sampler.sample(1), sampler.sample(2)};
  std::stringstream buf;
  write_mspp_jsonl(examples, buf);
  CHECK(read_mspp_jsonl(buf) == examples);
}

TEST_CASE("synthetic as2 has one positive per question") {
  const auto rows = generate_synthetic_as2({5, 30, 5}, lexicon());
  const auto bundles = build_bundles(rows, 5, OverflowPolicy::kTruncate);
  REQUIRE(bundles.size() == 30);
  for (const auto& b : bundles) {
    CHECK(b.candidates.size() == 5);
    int positives = 0;
    for (int g : b.gold) positives += g;
    CHECK(positives == 1);
  }
  CHECK_THROWS_AS(generate_synthetic_as2({5, 1, 20}, lexicon()), Error);
}

}  // TEST_SUITE
}  // namespace
}  // namespace jmsi
