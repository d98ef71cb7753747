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

#include "jmsi/sampler.h"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "jmsi/error.h"
#include "jmsi/random.h"
#include "json.hpp"

namespace jmsi {
namespace {

// k distinct values from [0, n) in random order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n,
                                                    std::size_t k) {
  std::vector<std::size_t> picked;
  picked.reserve(k);
  if (n <= 4 * k) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.uniform_index(n - i);
      std::swap(pool[i], pool[j]);
      picked.push_back(pool[i]);
    }
    return picked;
  }
  while (picked.size() < k) {
    const std::size_t x = rng.uniform_index(n);
    if (std::find(picked.begin(), picked.end(), x) == picked.end()) {
      picked.push_back(x);
    }
  }
  return picked;
}

// Maps an index of the complement of `hole` within `outer` to a flat index.
std::size_t skip_range(const IndexRange& outer, const IndexRange& hole,
                       std::size_t j) {
  const std::size_t flat = outer.begin + j;
  return flat < hole.begin ? flat : flat + hole.size();
}

nlohmann::ordered_json sentence_json(const Sentence& s) {
  nlohmann::ordered_json j;
  j["text"] = s.text;
  j["doc_id"] = s.doc_id;
  j["para_id"] = s.para_id;
  j["sent_id"] = s.sent_id;
  return j;
}

Sentence sentence_from_json(const nlohmann::json& j) {
  return Sentence{j.at("text").get<std::string>(), j.at("doc_id").get<int>(),
                  j.at("para_id").get<int>(), j.at("sent_id").get<int>()};
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

void SamplerConfig::validate() const {
  if (k1 < 1 || k2 < 0 || k3 < 0) {
    usage_error("sampler config requires k1 >= 1 and k2, k3 >= 0");
  }
}

MsppSampler::MsppSampler(const Corpus& corpus, SamplerConfig cfg)
    : corpus_(&corpus), cfg_(cfg) {
  cfg_.validate();
  const std::size_t n = corpus.num_sentences();
  for (std::size_t i = 0; i < n; ++i) {
    const Sentence& s = corpus.sentence(i);
    const IndexRange doc = corpus.document_sentences(s.doc_id);
    const IndexRange para = corpus.paragraph_sentences(s.doc_id, s.para_id);
    if (para.size() >= static_cast<std::size_t>(cfg_.k1) + 1 &&
        doc.size() - para.size() >= static_cast<std::size_t>(cfg_.k2) &&
        n - doc.size() >= static_cast<std::size_t>(cfg_.k3)) {
      anchors_.push_back(i);
    }
  }
  if (anchors_.empty()) {
    data_error("corpus too small for (k1,k2,k3) = (" + std::to_string(cfg_.k1) +
               "," + std::to_string(cfg_.k2) + "," + std::to_string(cfg_.k3) +
               "): no eligible anchor sentence");
  }
}

MsppExample MsppSampler::sample(std::uint64_t seed) const {
  const Corpus& corpus = *corpus_;
  Rng rng(seed);
  const std::size_t anchor = anchors_[rng.uniform_index(anchors_.size())];
  const Sentence& s0 = corpus.sentence(anchor);
  const IndexRange all{0, corpus.num_sentences()};
  const IndexRange doc = corpus.document_sentences(s0.doc_id);
  const IndexRange para = corpus.paragraph_sentences(s0.doc_id, s0.para_id);
  const IndexRange self{anchor, anchor + 1};

  std::vector<std::size_t> picked;
  for (const std::size_t j :
       sample_without_replacement(rng, para.size() - 1, cfg_.k1)) {
    picked.push_back(skip_range(para, self, j));
  }
  for (const std::size_t j :
       sample_without_replacement(rng, doc.size() - para.size(), cfg_.k2)) {
    picked.push_back(skip_range(doc, para, j));
  }
  for (const std::size_t j :
       sample_without_replacement(rng, all.size() - doc.size(), cfg_.k3)) {
    picked.push_back(skip_range(all, doc, j));
  }
  if (cfg_.shuffle_candidates) rng.shuffle(std::span<std::size_t>(picked));

  MsppExample example;
  example.s0 = s0;
  for (const std::size_t i : picked) {
    const Sentence& c = corpus.sentence(i);
    example.candidates.push_back(c);
    example.labels.push_back(c.doc_id == s0.doc_id && c.para_id == s0.para_id);
  }
  return example;
}

MsppExample sample_mspp_example(const Corpus& corpus, const SamplerConfig& cfg,
                                std::uint64_t seed) {
  return MsppSampler(corpus, cfg).sample(seed);
}

MaskedSequence apply_mlm_masking(std::span<const TokenId> ids,
                                 const Vocab& vocab, double mask_prob,
                                 std::uint64_t seed) {
  Rng rng(seed);
  MaskedSequence out;
  out.input_ids.assign(ids.begin(), ids.end());
  out.mlm_labels.assign(ids.size(), kIgnore);
  const std::size_t n_regular = vocab.size() - kNumReserved;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (is_reserved(ids[i])) continue;
    if (!rng.bernoulli(mask_prob)) continue;
    out.mlm_labels[i] = ids[i];
    const double r = rng.uniform();
    if (r < 0.8) {
      out.input_ids[i] = kMaskId;
    } else if (r < 0.9 && n_regular > 0) {
      out.input_ids[i] =
          kNumReserved + static_cast<TokenId>(rng.uniform_index(n_regular));
    }
  }
  return out;
}

std::string_view verification_label_name(VerificationLabel label) {
  switch (label) {
    case VerificationLabel::kSupports:
      return "SUPPORTS";
    case VerificationLabel::kRefutes:
      return "REFUTES";
    case VerificationLabel::kNotEnoughInfo:
      return "NOT ENOUGH INFO";
  }
  return "";
}

VerificationLabel parse_verification_label(std::string_view name) {
  if (name == "SUPPORTS") return VerificationLabel::kSupports;
  if (name == "REFUTES") return VerificationLabel::kRefutes;
  if (name == "NOT ENOUGH INFO" || name == "NOT-ENOUGH-INFO") {
    return VerificationLabel::kNotEnoughInfo;
  }
  data_error("unknown verification label '" + std::string(name) + "'");
}

OverflowPolicy parse_overflow_policy(std::string_view name) {
  if (name == "truncate") return OverflowPolicy::kTruncate;
  if (name == "split") return OverflowPolicy::kSplit;
  usage_error("unknown overflow policy '" + std::string(name) +
              "' (expected truncate or split)");
}

std::vector<As2Row> read_as2_tsv(std::istream& in) {
  std::vector<As2Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (line_no == 1 && fields.size() == 3 && fields[0] == "question" &&
        fields[2] == "label") {
      continue;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 3) {
      data_error("malformed AS2 row at " + where + ": expected 3 tab-separated columns");
    }
    if (fields[2] != "0" && fields[2] != "1") {
      data_error("malformed AS2 row at " + where + ": label must be 0 or 1");
    }
    rows.push_back(As2Row{fields[0], fields[1], fields[2] == "1"});
  }
  return rows;
}

void write_as2_tsv(const std::vector<As2Row>& rows, std::ostream& out) {
  out << "question\tcandidate\tlabel\n";
  for (const auto& r : rows) {
    out << r.question << '\t' << r.candidate << '\t' << r.label << '\n';
  }
}

std::vector<VerificationRecord> read_verification_jsonl(std::istream& in) {
  std::vector<VerificationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      VerificationRecord r;
      r.claim = j.at("claim").get<std::string>();
      r.evidences = j.at("evidences").get<std::vector<std::string>>();
      r.label = parse_verification_label(j.at("label").get<std::string>());
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      data_error("malformed verification record at " + where + ": " + e.what());
    } catch (const Error& e) {
      data_error("malformed verification record at " + where + ": " + e.what());
    }
  }
  return records;
}

void write_verification_jsonl(const std::vector<VerificationRecord>& records,
                              std::ostream& out) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["claim"] = r.claim;
    j["evidences"] = r.evidences;
    j["label"] = verification_label_name(r.label);
    out << j.dump() << '\n';
  }
}

std::vector<CandidateBundle> build_bundles(const std::vector<As2Row>& rows,
                                           int k, OverflowPolicy policy) {
  if (k < 1) usage_error("bundle size k must be >= 1");
  std::vector<CandidateBundle> bundles;
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t end = i;
    while (end < rows.size() && rows[end].question == rows[i].question) ++end;
    for (std::size_t start = i; start < end; start += k) {
      CandidateBundle b;
      b.bundle_id = std::to_string(bundles.size());
      b.query = rows[i].question;
      for (std::size_t r = start; r < std::min(end, start + k); ++r) {
        if (rows[r].label != 0 && rows[r].label != 1) {
          data_error("malformed AS2 record " + std::to_string(r) +
                     ": label must be 0 or 1");
        }
        b.candidates.push_back(rows[r].candidate);
        b.gold.push_back(rows[r].label);
      }
      bundles.push_back(std::move(b));
      if (policy == OverflowPolicy::kTruncate) break;
    }
    i = end;
  }
  return bundles;
}

std::vector<CandidateBundle> build_bundles(
    const std::vector<VerificationRecord>& records, int k,
    OverflowPolicy policy) {
  if (k < 1) usage_error("bundle size k must be >= 1");
  std::vector<CandidateBundle> bundles;
  for (const auto& r : records) {
    const std::size_t n = r.evidences.size();
    for (std::size_t start = 0; start < n; start += k) {
      CandidateBundle b;
      b.bundle_id = std::to_string(bundles.size());
      b.query = r.claim;
      b.candidates.assign(r.evidences.begin() + start,
                          r.evidences.begin() + std::min(n, start + k));
      b.label = r.label;
      bundles.push_back(std::move(b));
      if (policy == OverflowPolicy::kTruncate) break;
    }
  }
  return bundles;
}

void write_mspp_jsonl(const std::vector<MsppExample>& examples,
                      std::ostream& out) {
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["s0"] = sentence_json(ex.s0);
    j["candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : ex.candidates) j["candidates"].push_back(sentence_json(c));
    j["labels"] = ex.labels;
    out << j.dump() << '\n';
  }
}

std::vector<MsppExample> read_mspp_jsonl(std::istream& in) {
  std::vector<MsppExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MsppExample ex;
      ex.s0 = sentence_from_json(j.at("s0"));
      for (const auto& c : j.at("candidates")) {
        ex.candidates.push_back(sentence_from_json(c));
      }
      ex.labels = j.at("labels").get<std::vector<int>>();
      if (ex.labels.size() != ex.candidates.size()) {
        data_error("labels and candidates differ in length");
      }
      examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      data_error("malformed MSPP record at line " + std::to_string(line_no) +
                 ": " + e.what());
    }
  }
  return examples;
}

namespace {

std::vector<int> distinct_topics(Rng& rng, int topic_vocab, int n) {
  if (topic_vocab < n) {
    usage_error("synthetic task needs topic_vocab_size >= candidates per query");
  }
  std::vector<std::size_t> picked =
      sample_without_replacement(rng, topic_vocab, n);
  return std::vector<int>(picked.begin(), picked.end());
}

std::string as_question(std::string sentence) {
  sentence.back() = '?';
  return sentence;
}

}  // namespace

std::vector<As2Row> generate_synthetic_as2(const SyntheticAs2Spec& spec,
                                           const SyntheticCorpusSpec& lexicon) {
  Rng rng(spec.seed);
  std::vector<As2Row> rows;
  for (int q = 0; q < spec.n_queries; ++q) {
    const auto topics =
        distinct_topics(rng, lexicon.topic_vocab_size, spec.n_candidates);
    // A numbered prefix keeps repeated questions in separate groups.
    const std::string question =
        "Q" + std::to_string(q) + " " + as_question(synthetic_sentence(rng, topics[0], lexicon));
    std::vector<As2Row> group;
    for (int c = 0; c < spec.n_candidates; ++c) {
      group.push_back(
          As2Row{question, synthetic_sentence(rng, topics[c], lexicon), c == 0});
    }
    rng.shuffle(std::span<As2Row>(group));
    rows.insert(rows.end(), group.begin(), group.end());
  }
  return rows;
}

std::vector<VerificationRecord> generate_synthetic_verification(
    const SyntheticAs2Spec& spec, const SyntheticCorpusSpec& lexicon) {
  Rng rng(spec.seed);
  std::vector<VerificationRecord> records;
  for (int q = 0; q < spec.n_queries; ++q) {
    const auto topics =
        distinct_topics(rng, lexicon.topic_vocab_size, spec.n_candidates + 1);
    VerificationRecord r;
    r.claim = synthetic_sentence(rng, topics[0], lexicon);
    r.label = static_cast<VerificationLabel>(rng.uniform_index(3));
    for (int c = 0; c < spec.n_candidates; ++c) {
      r.evidences.push_back(synthetic_sentence(rng, topics[c + 1], lexicon));
    }
    if (r.label != VerificationLabel::kNotEnoughInfo) {
      std::string evidence = synthetic_sentence(rng, topics[0], lexicon);
      if (r.label == VerificationLabel::kRefutes) {
        evidence.insert(evidence.size() - 1, " not");
      }
      r.evidences[rng.uniform_index(r.evidences.size())] = std::move(evidence);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace jmsi
