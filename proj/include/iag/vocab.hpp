// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "iag/util.hpp"

namespace iag {

// Lowercases and splits on whitespace; punctuation is split off and dropped,
// so "Wolves, tigers" becomes ["wolves", "tigers"].
std::vector<std::string> split_words(const std::string& text);

struct TokenSeq {
  std::vector<int> ids;

  bool empty() const { return ids.empty(); }
  size_t size() const { return ids.size(); }
  int operator[](size_t i) const { return ids[i]; }
  bool operator==(const TokenSeq& o) const { return ids == o.ids; }
};

// Word-level vocabulary. Ids 0-4 are PAD, BOS, EOS, UNK, SEP in that order;
// regular tokens follow ordered by (frequency desc, lexicographic).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSep = 4;
  static constexpr int kNumSpecial = 5;

  Vocab();

  static Vocab build(const std::vector<std::string>& corpus, int min_freq);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;

  TokenSeq encode(const std::string& text) const;
  // Joins non-special tokens with single spaces; UNK prints as "<unk>".
  std::string decode(const TokenSeq& seq) const;

  // Stable content hash, embedded in checkpoints to catch mismatched models.
  std::uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

inline TokenSeq tokenize(const std::string& text, const Vocab& vocab) { return vocab.encode(text); }
inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) { return vocab.decode(seq); }

}  // namespace iag
