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

#ifndef JMSI_TOKENIZER_H_
#define JMSI_TOKENIZER_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "jmsi/corpus.h"

namespace jmsi {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kNumReserved = 5;

inline bool is_reserved(TokenId id) { return id >= 0 && id < kNumReserved; }

// Word-level vocabulary. Ids 0..4 are [PAD] [UNK] [CLS] [SEP] [MASK]; raw text
// only ever encodes to UNK or ids >= 5.
class Vocab {
 public:
  Vocab();
  // `words` are the non-reserved tokens in id order (first gets id 5).
  explicit Vocab(std::vector<std::string> words);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  // Returns kUnkId for unknown words.
  TokenId id_of(std::string_view word) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Lowercased word tokens; ASCII punctuation characters are tokens of their own.
std::vector<std::string> split_words(std::string_view text);

// Frequency-descending, ties in lexicographic order; at most max_size entries
// including the reserved ones. Words with count < min_freq are dropped.
Vocab build_vocab(const Corpus& corpus, std::size_t max_size,
                  std::size_t min_freq);

std::vector<TokenId> encode(const Vocab& vocab, std::string_view text);
std::string decode(const Vocab& vocab, std::span<const TokenId> ids);

// One token per line, starting with the five reserved names.
void write_vocab(const Vocab& vocab, std::ostream& out);
Vocab read_vocab(std::istream& in);
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);

}  // namespace jmsi

#endif  // JMSI_TOKENIZER_H_
