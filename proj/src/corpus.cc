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

#include "jmsi/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "jmsi/error.h"
#include "jmsi/random.h"
#include "json.hpp"

namespace jmsi {
namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

Corpus::Corpus(const std::vector<DocumentText>& documents) {
  para_begin_.clear();
  doc_para_begin_.clear();
  for (std::size_t d = 0; d < documents.size(); ++d) {
    if (documents[d].empty()) {
      data_error("document " + std::to_string(d) + " has no paragraphs");
    }
    doc_para_begin_.push_back(para_begin_.size());
    for (std::size_t p = 0; p < documents[d].size(); ++p) {
      const auto& paragraph = documents[d][p];
      if (paragraph.empty()) {
        data_error("document " + std::to_string(d) + " paragraph " +
                   std::to_string(p) + " has no sentences");
      }
      para_begin_.push_back(sentences_.size());
      for (std::size_t s = 0; s < paragraph.size(); ++s) {
        if (trim(paragraph[s]).empty()) {
          data_error("document " + std::to_string(d) + " paragraph " +
                     std::to_string(p) + " has an empty sentence");
        }
        sentences_.push_back(Sentence{paragraph[s], static_cast<int>(d),
                                      static_cast<int>(p),
                                      static_cast<int>(s)});
      }
    }
  }
  doc_para_begin_.push_back(para_begin_.size());
  para_begin_.push_back(sentences_.size());
}

std::size_t Corpus::num_paragraphs_in(int doc_id) const {
  return doc_para_begin_[doc_id + 1] - doc_para_begin_[doc_id];
}

IndexRange Corpus::document_sentences(int doc_id) const {
  return {para_begin_[doc_para_begin_[doc_id]],
          para_begin_[doc_para_begin_[doc_id + 1]]};
}

IndexRange Corpus::paragraph_sentences(int doc_id, int para_id) const {
  const std::size_t p = doc_para_begin_[doc_id] + para_id;
  return {para_begin_[p], para_begin_[p + 1]};
}

std::size_t Corpus::flat_index(const Sentence& s) const {
  return paragraph_sentences(s.doc_id, s.para_id).begin + s.sent_id;
}

std::vector<DocumentText> Corpus::to_text() const {
  std::vector<DocumentText> docs(num_documents());
  for (const auto& s : sentences_) {
    auto& doc = docs[s.doc_id];
    if (doc.size() <= static_cast<std::size_t>(s.para_id)) doc.emplace_back();
    doc[s.para_id].push_back(s.text);
  }
  return docs;
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl-docs") return CorpusFormat::kJsonlDocs;
  if (name == "plaintext-dir") return CorpusFormat::kPlaintextDir;
  usage_error("unknown corpus format '" + std::string(name) +
              "' (expected jsonl-docs or plaintext-dir)");
}

std::vector<std::string> split_paragraph_into_sentences(std::string_view text) {
  std::vector<std::string> segments;
  auto emit = [&](std::string_view piece) {
    piece = trim(piece);
    if (piece.empty()) return;
    if (piece.size() < 3 && !segments.empty()) {
      segments.back() += ' ';
      segments.back() += piece;
      return;
    }
    segments.emplace_back(piece);
  };

  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!is_terminal(text[i])) continue;
    std::size_t j = i + 1;
    while (j < text.size() && is_space(text[j])) ++j;
    const bool at_end = j == text.size();
    const bool before_capital =
        j > i + 1 && j < text.size() &&
        std::isupper(static_cast<unsigned char>(text[j])) != 0;
    if (at_end || before_capital) {
      emit(text.substr(start, i + 1 - start));
      start = i + 1;
    }
  }
  if (start < text.size()) emit(text.substr(start));
  return segments;
}

Corpus read_corpus_jsonl(std::istream& in) {
  std::vector<DocumentText> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      data_error("malformed record at " + where + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("paragraphs") ||
        !record["paragraphs"].is_array()) {
      data_error("malformed record at " + where +
                 ": expected an object with a \"paragraphs\" array");
    }
    if (record.contains("doc_id")) {
      const auto& id = record["doc_id"];
      if (!id.is_number_integer() ||
          id.get<long long>() != static_cast<long long>(docs.size())) {
        data_error("malformed record at " + where + ": doc_id must equal " +
                   std::to_string(docs.size()) + " (dense, in file order)");
      }
    }
    DocumentText doc;
    for (const auto& paragraph : record["paragraphs"]) {
      if (!paragraph.is_array()) {
        data_error("malformed record at " + where +
                   ": paragraph is not an array");
      }
      std::vector<std::string> sentences;
      for (const auto& s : paragraph) {
        if (!s.is_string() || trim(s.get_ref<const std::string&>()).empty()) {
          data_error("malformed record at " + where +
                     ": sentences must be non-empty strings");
        }
        sentences.push_back(s.get<std::string>());
      }
      if (sentences.empty()) {
        data_error("malformed record at " + where + ": empty paragraph");
      }
      doc.push_back(std::move(sentences));
    }
    if (doc.empty()) {
      data_error("malformed record at " + where + ": document has no paragraphs");
    }
    docs.push_back(std::move(doc));
  }
  if (docs.empty()) data_error("empty corpus");
  return Corpus(docs);
}

namespace {

DocumentText parse_plaintext(std::istream& in) {
  DocumentText doc;
  std::string paragraph;
  auto flush = [&] {
    auto sentences = split_paragraph_into_sentences(paragraph);
    if (!sentences.empty()) doc.push_back(std::move(sentences));
    paragraph.clear();
  };
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (!paragraph.empty()) paragraph += ' ';
    paragraph += trim(line);
  }
  flush();
  return doc;
}

}  // namespace

Corpus read_plaintext_document(std::istream& in) {
  DocumentText doc = parse_plaintext(in);
  if (doc.empty()) data_error("empty corpus");
  return Corpus({doc});
}

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) data_error("path does not exist: " + path.string());

  if (format == CorpusFormat::kJsonlDocs) {
    std::ifstream in(path);
    if (!in) data_error("cannot open " + path.string());
    return read_corpus_jsonl(in);
  }

  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<DocumentText> docs;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) data_error("cannot open " + file.string());
    DocumentText doc = parse_plaintext(in);
    if (!doc.empty()) docs.push_back(std::move(doc));
  }
  if (docs.empty()) data_error("empty corpus");
  return Corpus(docs);
}

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out) {
  const auto docs = corpus.to_text();
  for (std::size_t d = 0; d < docs.size(); ++d) {
    nlohmann::ordered_json record;
    record["doc_id"] = d;
    record["paragraphs"] = docs[d];
    out << record.dump() << '\n';
  }
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  stats.num_documents = corpus.num_documents();
  stats.num_paragraphs = corpus.num_paragraphs();
  stats.num_sentences = corpus.num_sentences();
  for (const auto& s : corpus.sentences()) {
    if (corpus.num_paragraphs_in(s.doc_id) >= 2 &&
        corpus.paragraph_sentences(s.doc_id, s.para_id).size() >= 2) {
      ++stats.num_mspp_eligible_anchors;
    }
  }
  return stats;
}

std::string synthetic_topic_word(int topic) {
  return "t" + std::to_string(topic);
}

std::string synthetic_filler_word(int filler) {
  return "w" + std::to_string(filler);
}

std::string synthetic_sentence(Rng& rng, int topic,
                               const SyntheticCorpusSpec& spec) {
  const int span = spec.max_fillers - spec.min_fillers + 1;
  const int n_fillers =
      spec.min_fillers + static_cast<int>(rng.uniform_index(span));
  std::vector<std::string> words;
  for (int i = 0; i < n_fillers; ++i) {
    int filler = static_cast<int>(rng.uniform_index(spec.filler_vocab_size));
    if (spec.topic_pool_size > 0 && rng.bernoulli(spec.topic_word_share)) {
      filler = spec.filler_vocab_size + topic * spec.topic_pool_size +
               static_cast<int>(rng.uniform_index(spec.topic_pool_size));
    }
    words.push_back(synthetic_filler_word(filler));
  }
  const auto at = static_cast<std::ptrdiff_t>(rng.uniform_index(words.size() + 1));
  words.insert(words.begin() + at, synthetic_topic_word(topic));

  std::string text;
  for (const auto& w : words) {
    if (!text.empty()) text += ' ';
    text += w;
  }
  text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  text += '.';
  return text;
}

Corpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  if (spec.n_docs < 1 || spec.paras_per_doc < 1 || spec.sents_per_para < 1 ||
      spec.topic_vocab_size < 1 || spec.filler_vocab_size < 1 ||
      spec.min_fillers < 0 || spec.max_fillers < spec.min_fillers ||
      spec.topic_pool_size < 0 || spec.topic_word_share < 0.0 ||
      spec.topic_word_share > 1.0) {
    usage_error("synthetic corpus counts must be >= 1");
  }
  Rng rng(spec.seed);
  std::vector<int> topics(spec.topic_vocab_size);
  std::vector<DocumentText> docs;
  for (int d = 0; d < spec.n_docs; ++d) {
    std::iota(topics.begin(), topics.end(), 0);
    rng.shuffle(std::span<int>(topics));
    DocumentText doc;
    for (int p = 0; p < spec.paras_per_doc; ++p) {
      const int topic =
          p < spec.topic_vocab_size
              ? topics[p]
              : static_cast<int>(rng.uniform_index(spec.topic_vocab_size));
      std::vector<std::string> paragraph;
      for (int s = 0; s < spec.sents_per_para; ++s) {
        paragraph.push_back(synthetic_sentence(rng, topic, spec));
      }
      doc.push_back(std::move(paragraph));
    }
    docs.push_back(std::move(doc));
  }
  return Corpus(docs);
}

}  // namespace jmsi
