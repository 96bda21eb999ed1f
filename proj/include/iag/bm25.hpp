// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "iag/types.hpp"

namespace iag {

// Okapi BM25 over the word tokenizer, with the +1-smoothed IDF
//   idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1).
// Immutable after build; concurrent retrieve calls are safe.
class Bm25Index {
 public:
  static Bm25Index build(const std::vector<Document>& corpus, double k1 = 1.2, double b = 0.75);

  double score(const std::string& query, const std::string& doc_id) const;

  // Top-k by (score desc, doc_id asc). May return fewer than k documents.
  std::vector<Document> retrieve(const std::string& query, int k) const;

  int doc_count() const { return static_cast<int>(docs_.size()); }
  double avg_doc_len() const { return avg_len_; }
  long doc_len(const std::string& doc_id) const { return docs_.at(doc_index(doc_id)).length; }
  long doc_freq(const std::string& term) const;
  double k1() const { return k1_; }
  double b() const { return b_; }

  // Versioned header line followed by one JSONL record per document; reload
  // rebuilds the statistics, which is exact because the build is deterministic.
  void save(const std::string& path) const;
  static Bm25Index load(const std::string& path);

 private:
  struct DocEntry {
    std::string doc_id;
    std::string text;
    long length = 0;
  };

  size_t doc_index(const std::string& doc_id) const;
  double score_doc(const std::vector<std::string>& query_terms, size_t idx) const;

  std::vector<DocEntry> docs_;
  std::unordered_map<std::string, size_t> id_to_index_;
  // term -> (doc index, term frequency), doc indices ascending
  std::unordered_map<std::string, std::vector<std::pair<size_t, long>>> postings_;
  double avg_len_ = 0.0;
  double k1_ = 1.2;
  double b_ = 0.75;
};

}  // namespace iag
