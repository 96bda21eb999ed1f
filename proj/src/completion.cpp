// SPDX-License-Identifier: Apache-2.0
#include "iag/completion.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include <httplib.h>
#include <json.hpp>

#include "iag/util.hpp"

namespace iag {

using nlohmann::json;

void CompletionRequest::validate() const {
  if (n_samples < 1) throw ConfigError("completion request: n_samples must be >= 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("completion request: temperature must be finite and >= 0");
  }
  if (max_tokens < 1) throw ConfigError("completion request: max_tokens must be >= 1");
}

std::string CompletionRequest::cache_key() const {
  json j;
  j["prompt"] = prompt;
  j["n"] = n_samples;
  j["temperature"] = temperature;
  j["max_tokens"] = max_tokens;
  j["stop"] = stop;
  return hex64(fnv1a(j.dump()));
}

FixtureCache FixtureCache::load(const std::string& path) {
  FixtureCache c;
  std::ifstream in(path, std::ios::binary);
  if (!in) return c;  // absent file = empty cache
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("prompt_hash") || !j.contains("completions")) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed fixture record");
    }
    c.entries_[j.at("prompt_hash").get<std::string>()] =
        j.at("completions").get<std::vector<std::string>>();
  }
  return c;
}

const std::vector<std::string>& FixtureCache::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw StageError("fixture cache miss for key " + key);
  return it->second;
}

void FixtureCache::put(const std::string& key, const std::vector<std::string>& completions) {
  entries_[key] = completions;
}

void FixtureCache::append_to(const std::string& path, const std::string& key) const {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw StageError("cannot write fixture file: " + path);
  json j;
  j["prompt_hash"] = key;
  j["completions"] = get(key);
  out << j.dump() << "\n";
}

MockTeacher::MockTeacher(const std::map<std::string, KnowledgeStatement>& teacher_table,
                         const std::vector<QAExample>& dataset, double noise, std::uint64_t seed)
    : noise_(noise), seed_(seed) {
  if (noise < 0.0 || noise > 1.0) throw ConfigError("mock teacher: noise must be in [0,1]");
  std::set<std::string> hypernyms;
  for (const auto& ex : dataset) {
    auto it = teacher_table.find(ex.qid);
    if (it == teacher_table.end()) continue;
    by_question_[ex.question] = {ex.qid, it->second.text};
    // statement shape: "... are <hypernym>. <hypernym> are ..."
    const std::string& s = it->second.text;
    auto dot = s.find(". ");
    if (dot != std::string::npos) {
      auto are = s.rfind(" are ", dot);
      if (are != std::string::npos) hypernyms.insert(s.substr(are + 5, dot - are - 5));
    }
  }
  hypernym_pool_.assign(hypernyms.begin(), hypernyms.end());
}

namespace {

std::string replace_word(const std::string& text, const std::string& from, const std::string& to) {
  std::string out;
  size_t pos = 0;
  while (pos < text.size()) {
    auto hit = text.find(from, pos);
    if (hit == std::string::npos) {
      out += text.substr(pos);
      break;
    }
    bool left_ok = hit == 0 || !std::isalnum(static_cast<unsigned char>(text[hit - 1]));
    size_t end = hit + from.size();
    bool right_ok = end >= text.size() || !std::isalnum(static_cast<unsigned char>(text[end]));
    out += text.substr(pos, hit - pos);
    out += (left_ok && right_ok) ? to : from;
    pos = end;
  }
  return out;
}

std::string flip_polarity(const std::string& stmt) {
  // flip the second sentence between "X are Y." and "X are not Y."
  auto dot = stmt.find(". ");
  if (dot == std::string::npos) return stmt;
  std::string head = stmt.substr(0, dot + 2);
  std::string tail = stmt.substr(dot + 2);
  auto neg = tail.find(" are not ");
  if (neg != std::string::npos) {
    tail = tail.substr(0, neg) + " are " + tail.substr(neg + 9);
  } else {
    auto pos = tail.find(" are ");
    if (pos != std::string::npos) tail = tail.substr(0, pos) + " are not " + tail.substr(pos + 5);
  }
  return head + tail;
}

}  // namespace

std::string MockTeacher::corrupt(const Entry& e, int sample_index) const {
  std::mt19937_64 rng(mix_seed(mix_seed(seed_, e.qid), "sample", static_cast<std::uint64_t>(sample_index)));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  if (u < noise_ / 2.0) return flip_polarity(e.statement);
  if (u < noise_ && hypernym_pool_.size() > 1) {
    const std::string& s = e.statement;
    auto dot = s.find(". ");
    auto are = dot == std::string::npos ? std::string::npos : s.rfind(" are ", dot);
    if (are != std::string::npos) {
      std::string hyper = s.substr(are + 5, dot - are - 5);
      std::vector<std::string> others;
      for (const auto& h : hypernym_pool_) {
        if (h != hyper) others.push_back(h);
      }
      const std::string& swap = others[rng() % others.size()];
      return replace_word(s, hyper, swap);
    }
  }
  return e.statement;
}

std::vector<std::string> MockTeacher::complete(const CompletionRequest& request) {
  request.validate();
  std::string question = question_from_prompt(request.prompt);
  auto it = by_question_.find(question);
  if (it == by_question_.end()) {
    throw StageError("mock teacher has no entry for question: " + question);
  }
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(request.n_samples));
  for (int i = 0; i < request.n_samples; ++i) {
    out.push_back(" " + corrupt(it->second, i) + "\n###");
  }
  return out;
}

HttpClient::HttpClient(std::string endpoint, std::string auth_token, int timeout_sec,
                       int max_retries, std::string fixture_path)
    : endpoint_(std::move(endpoint)),
      auth_token_(std::move(auth_token)),
      timeout_sec_(timeout_sec),
      max_retries_(max_retries),
      fixture_path_(std::move(fixture_path)) {
  if (!fixture_path_.empty()) cache_ = FixtureCache::load(fixture_path_);
}

std::vector<std::string> HttpClient::complete(const CompletionRequest& request) {
  request.validate();
  const std::string key = request.cache_key();
  if (cache_.contains(key)) return cache_.get(key);

  // split "http://host:port/path"
  auto scheme_end = endpoint_.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("bad completion endpoint: " + endpoint_);
  auto path_start = endpoint_.find('/', scheme_end + 3);
  std::string base = path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

  json body;
  body["prompt"] = request.prompt;
  body["n"] = request.n_samples;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  body["stop"] = request.stop;

  std::string last_error;
  for (int attempt = 1; attempt <= max_retries_; ++attempt) {
    httplib::Client cli(base);
    cli.set_connection_timeout(timeout_sec_, 0);
    cli.set_read_timeout(timeout_sec_, 0);
    httplib::Headers headers;
    if (!auth_token_.empty()) headers.emplace("Authorization", "Bearer " + auth_token_);
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("completions") || !j.at("completions").is_array()) {
      last_error = "malformed completion response";
      continue;
    }
    auto completions = j.at("completions").get<std::vector<std::string>>();
    if (static_cast<int>(completions.size()) != request.n_samples) {
      last_error = "completion count mismatch";
      continue;
    }
    cache_.put(key, completions);
    if (!fixture_path_.empty()) cache_.append_to(fixture_path_, key);
    return completions;
  }
  throw StageError("completion service failed after " + std::to_string(max_retries_) +
                   " attempts: " + last_error);
}

FixtureClient::FixtureClient(const std::string& fixture_path) : path_(fixture_path) {
  std::ifstream probe(fixture_path, std::ios::binary);
  if (!probe) throw ConfigError("fixture file not found: " + fixture_path);
  cache_ = FixtureCache::load(fixture_path);
}

std::vector<std::string> FixtureClient::complete(const CompletionRequest& request) {
  request.validate();
  const std::string key = request.cache_key();
  if (!cache_.contains(key)) {
    throw StageError("fixture replay miss in " + path_ + " for key " + key);
  }
  return cache_.get(key);
}

std::vector<KnowledgeStatement> sample_statements(CompletionClient& client,
                                                  const std::string& question,
                                                  const PromptTemplate& tmpl, int n,
                                                  double temperature, int max_tokens) {
  if (n < 1) throw ConfigError("sample_statements: n must be >= 1");
  CompletionRequest req;
  req.prompt = render_prompt(tmpl, question);
  req.n_samples = n;
  req.temperature = temperature;
  req.max_tokens = max_tokens;
  auto raw = client.complete(req);
  if (static_cast<int>(raw.size()) != n) {
    throw StageError("completion client returned wrong sample count");
  }
  std::vector<KnowledgeStatement> out;
  out.reserve(static_cast<size_t>(n));
  for (const auto& r : raw) {
    KnowledgeStatement parsed;
    bool ok = false;
    std::string last_error;
    for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
      try {
        parsed = parse_completion(attempt == 0 ? r : client.complete([&] {
                                    CompletionRequest retry = req;
                                    retry.n_samples = 1;
                                    return retry;
                                  }())[0]);
        ok = true;
      } catch (const ConfigError& e) {
        last_error = e.what();
      }
    }
    if (!ok) throw StageError("empty completion after 3 attempts: " + last_error);
    parsed.source = StatementSource::teacher;
    out.push_back(std::move(parsed));
  }
  return out;
}

}  // namespace iag
