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

#include "jmsi/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "jmsi/error.h"

namespace jmsi {
namespace {

constexpr const char* kReservedNames[kNumReserved] = {"[PAD]", "[UNK]", "[CLS]",
                                                      "[SEP]", "[MASK]"};

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> words) {
  tokens_.assign(std::begin(kReservedNames), std::end(kReservedNames));
  for (auto& w : words) {
    if (w.empty() || index_.contains(w)) {
      data_error("vocabulary has an empty or duplicate token '" + w + "'");
    }
    index_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(w));
  }
}

TokenId Vocab::id_of(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current += c < 0x80 ? static_cast<char>(std::tolower(c)) : ch;
    }
  }
  flush();
  return words;
}

Vocab build_vocab(const Corpus& corpus, std::size_t max_size,
                  std::size_t min_freq) {
  if (max_size < kNumReserved + 1) {
    usage_error("vocabulary max_size must be >= 6");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus.sentences()) {
    for (auto& w : split_words(s.text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [word, count] : counts) {
    if (count >= min_freq) ranked.emplace_back(word, count);
  }
  // std::map iteration is already lexicographic, so a stable sort on count
  // gives the tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kNumReserved);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);
  return Vocab(std::move(words));
}

std::vector<TokenId> encode(const Vocab& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id_of(w));
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids) {
  std::string text;
  for (const TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      data_error("token id " + std::to_string(id) +
                 " out of range for vocabulary of size " +
                 std::to_string(vocab.size()));
    }
    if (!text.empty()) text += ' ';
    text += vocab.token(id);
  }
  return text;
}

void write_vocab(const Vocab& vocab, std::ostream& out) {
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << vocab.token(static_cast<TokenId>(i)) << '\n';
  }
}

Vocab read_vocab(std::istream& in) {
  std::string line;
  for (TokenId i = 0; i < kNumReserved; ++i) {
    if (!std::getline(in, line) || line != kReservedNames[i]) {
      data_error("vocabulary file line " + std::to_string(i + 1) +
                 ": expected " + kReservedNames[i]);
    }
  }
  std::vector<std::string> words;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    words.push_back(line);
  }
  return Vocab(std::move(words));
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) data_error("cannot write " + path.string());
  write_vocab(vocab, out);
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) data_error("cannot open vocabulary " + path.string());
  return read_vocab(in);
}

}  // namespace jmsi
