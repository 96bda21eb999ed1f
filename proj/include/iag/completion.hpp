// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "iag/prompt.hpp"
#include "iag/types.hpp"

namespace iag {

struct CompletionRequest {
  std::string prompt;
  int n_samples = 1;
  double temperature = 0.7;
  int max_tokens = 64;
  std::vector<std::string> stop = {"###", "Question:"};

  void validate() const;
  // Stable key over all request fields, used for fixture lookup.
  std::string cache_key() const;
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  // Returns exactly request.n_samples raw completions.
  virtual std::vector<std::string> complete(const CompletionRequest& request) = 0;
};

// Append-only JSONL store of {"prompt_hash", "completions": [...]} records.
class FixtureCache {
 public:
  FixtureCache() = default;
  static FixtureCache load(const std::string& path);

  bool contains(const std::string& key) const { return entries_.count(key) > 0; }
  const std::vector<std::string>& get(const std::string& key) const;
  void put(const std::string& key, const std::vector<std::string>& completions);
  void append_to(const std::string& path, const std::string& key) const;
  size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

// Deterministic stand-in for the completion service. Serves the benchmark's
// per-question gold statement, independently corrupting each sample: with
// probability noise/2 the polarity flips, with probability noise/2 the
// hypernym is replaced by a random other hypernym. Sample randomness derives
// from (seed, qid, sample index), so identical requests always return
// identical completions.
class MockTeacher : public CompletionClient {
 public:
  MockTeacher(const std::map<std::string, KnowledgeStatement>& teacher_table,
              const std::vector<QAExample>& dataset, double noise, std::uint64_t seed);

  std::vector<std::string> complete(const CompletionRequest& request) override;

 private:
  struct Entry {
    std::string qid;
    std::string statement;
  };
  std::string corrupt(const Entry& e, int sample_index) const;

  std::map<std::string, Entry> by_question_;
  std::vector<std::string> hypernym_pool_;
  double noise_;
  std::uint64_t seed_;
};

// POSTs {prompt, n, temperature, max_tokens, stop} as JSON and expects
// {"completions": [...]} back. Responses are recorded into a fixture file when
// one is configured, so later runs replay offline.
class HttpClient : public CompletionClient {
 public:
  HttpClient(std::string endpoint, std::string auth_token, int timeout_sec = 30,
             int max_retries = 3, std::string fixture_path = "");

  std::vector<std::string> complete(const CompletionRequest& request) override;

 private:
  std::string endpoint_;
  std::string auth_token_;
  int timeout_sec_;
  int max_retries_;
  std::string fixture_path_;
  FixtureCache cache_;
};

// Replays a fixture file; never touches the network. A cache miss is an error.
class FixtureClient : public CompletionClient {
 public:
  explicit FixtureClient(const std::string& fixture_path);

  std::vector<std::string> complete(const CompletionRequest& request) override;

 private:
  FixtureCache cache_;
  std::string path_;
};

// Samples n statements for the question via the client, parsing each
// completion. Empty completions are retried up to 3 times.
std::vector<KnowledgeStatement> sample_statements(CompletionClient& client,
                                                  const std::string& question,
                                                  const PromptTemplate& tmpl, int n,
                                                  double temperature, int max_tokens = 64);

}  // namespace iag
