// SPDX-License-Identifier: Apache-2.0
#include "iag/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace iag {

namespace {
const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocab::Vocab() {
  for (int i = 0; i < kNumSpecial; ++i) {
    id_to_token_.push_back(kSpecialNames[i]);
    token_to_id_[kSpecialNames[i]] = i;
  }
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int min_freq) {
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1");
  std::map<std::string, long> freq;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++freq[w];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, n] : kept) {
    (void)n;
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw ConfigError("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<size_t>(id)];
}

TokenSeq Vocab::encode(const std::string& text) const {
  TokenSeq seq;
  for (auto& w : split_words(text)) seq.ids.push_back(id_of(w));
  return seq;
}

std::string Vocab::decode(const TokenSeq& seq) const {
  std::string out;
  for (int id : seq.ids) {
    if (id == kPad || id == kBos || id == kEos || id == kSep) continue;
    if (!out.empty()) out.push_back(' ');
    out += token_of(id);
  }
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& tok : id_to_token_) {
    h = fnv1a(tok, h);
    h = fnv1a("\n", h);
  }
  return h;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write vocab file: " + path);
  for (const auto& tok : id_to_token_) out << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot read vocab file: " + path);
  Vocab v;
  std::string line;
  int idx = 0;
  while (std::getline(in, line)) {
    if (idx < kNumSpecial) {
      if (line != kSpecialNames[idx]) throw StageError("vocab file corrupt: bad special token row");
    } else {
      v.token_to_id_[line] = static_cast<int>(v.id_to_token_.size());
      v.id_to_token_.push_back(line);
    }
    ++idx;
  }
  if (idx < kNumSpecial) throw StageError("vocab file corrupt: missing special tokens");
  return v;
}

}  // namespace iag
