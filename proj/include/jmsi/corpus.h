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

#ifndef JMSI_CORPUS_H_
#define JMSI_CORPUS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace jmsi {

struct Sentence {
  std::string text;
  int doc_id = 0;
  int para_id = 0;
  int sent_id = 0;

  bool operator==(const Sentence&) const = default;
};

// Half-open range of flat sentence indices.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
};

// Nested paragraph text: documents -> paragraphs -> sentences.
using DocumentText = std::vector<std::vector<std::string>>;

// Immutable document -> paragraph -> sentence hierarchy with dense ids.
// Sentences are stored flat in corpus order, so a paragraph and a document
// each occupy a contiguous IndexRange.
class Corpus {
 public:
  Corpus() = default;

  // Throws a data error if any document, paragraph or sentence is empty.
  explicit Corpus(const std::vector<DocumentText>& documents);

  std::size_t num_documents() const { return doc_para_begin_.size() - 1; }
  std::size_t num_paragraphs() const { return para_begin_.size() - 1; }
  std::size_t num_sentences() const { return sentences_.size(); }
  bool empty() const { return sentences_.empty(); }

  const Sentence& sentence(std::size_t flat_index) const {
    return sentences_[flat_index];
  }
  const std::vector<Sentence>& sentences() const { return sentences_; }

  std::size_t num_paragraphs_in(int doc_id) const;
  IndexRange document_sentences(int doc_id) const;
  IndexRange paragraph_sentences(int doc_id, int para_id) const;
  std::size_t flat_index(const Sentence& s) const;

  std::vector<DocumentText> to_text() const;

  bool operator==(const Corpus& other) const {
    return sentences_ == other.sentences_;
  }

 private:
  std::vector<Sentence> sentences_;
  // Flat sentence offset of every paragraph, plus a trailing sentinel.
  std::vector<std::size_t> para_begin_{0};
  // Global paragraph index of each document's first paragraph, plus sentinel.
  std::vector<std::size_t> doc_para_begin_{0};
};

struct CorpusStats {
  std::size_t num_documents = 0;
  std::size_t num_paragraphs = 0;
  std::size_t num_sentences = 0;
  // Sentences whose paragraph has >= 2 sentences and whose document has
  // >= 2 paragraphs.
  std::size_t num_mspp_eligible_anchors = 0;
};

enum class CorpusFormat { kJsonlDocs, kPlaintextDir };

CorpusFormat parse_corpus_format(std::string_view name);

// Splits at '.', '!' or '?' when followed by whitespace and an uppercase
// letter, or by the end of the text. Delimiters stay with their sentence and
// segments shorter than 3 characters are glued onto the previous one.
std::vector<std::string> split_paragraph_into_sentences(std::string_view text);

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format);
Corpus read_corpus_jsonl(std::istream& in);
Corpus read_plaintext_document(std::istream& in);

// Canonical jsonl-docs output: one document per line,
// {"doc_id": n, "paragraphs": [[...], ...]}.
void write_corpus_jsonl(const Corpus& corpus, std::ostream& out);

CorpusStats corpus_stats(const Corpus& corpus);

struct SyntheticCorpusSpec {
  std::uint64_t seed = 0;
  int n_docs = 1;
  int paras_per_doc = 1;
  int sents_per_para = 1;
  int topic_vocab_size = 1;
  int filler_vocab_size = 200;
  int min_fillers = 3;
  int max_fillers = 5;
  // Each topic owns topic_pool_size filler words of its own; a filler is
  // drawn from the sentence topic's pool with probability topic_word_share
  // and from the shared filler vocabulary otherwise.
  int topic_pool_size = 0;
  double topic_word_share = 0.0;
};

std::string synthetic_topic_word(int topic);
std::string synthetic_filler_word(int filler);

class Rng;

// One synthetic sentence about `topic`: the topic word at a random position
// among filler words, first letter capitalized, terminated by '.'.
std::string synthetic_sentence(Rng& rng, int topic,
                               const SyntheticCorpusSpec& spec);

// Every paragraph draws a latent topic word (distinct within a document while
// the topic vocabulary allows it). Each sentence of the paragraph carries that
// word at a random position among random filler words.
Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

}  // namespace jmsi

#endif  // JMSI_CORPUS_H_
