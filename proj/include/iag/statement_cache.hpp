// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace iag {

// Per-question store of sampled knowledge statements and (optionally) their
// generator confidences. JSONL: {"qid", "samples": [str], "confidences": [real]?}
class StatementCache {
 public:
  struct Entry {
    std::vector<std::string> samples;
    std::vector<double> confidences;  // empty until computed
  };

  static StatementCache load(const std::string& path);
  void save(const std::string& path) const;

  bool has(const std::string& qid) const { return entries_.count(qid) > 0; }
  // Counts a cache hit; missing qid throws naming it.
  const Entry& get(const std::string& qid) const;
  void put(const std::string& qid, std::vector<std::string> samples);
  void set_confidences(const std::string& qid, std::vector<double> confidences);
  bool has_confidences(const std::string& qid) const;

  size_t size() const { return entries_.size(); }
  long hit_count() const { return hits_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
  mutable long hits_ = 0;
};

}  // namespace iag
