// SPDX-License-Identifier: Apache-2.0
#include "iag/statement_cache.hpp"

#include <fstream>

#include <json.hpp>

#include "iag/util.hpp"

namespace iag {

using nlohmann::json;

StatementCache StatementCache::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("statement cache not found: " + path);
  StatementCache cache;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("qid") || !j.contains("samples")) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed cache record");
    }
    Entry e;
    e.samples = j.at("samples").get<std::vector<std::string>>();
    if (j.contains("confidences")) {
      e.confidences = j.at("confidences").get<std::vector<double>>();
      if (e.confidences.size() != e.samples.size()) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": confidence count mismatch");
      }
    }
    cache.entries_[j.at("qid").get<std::string>()] = std::move(e);
  }
  return cache;
}

void StatementCache::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write statement cache: " + path);
  for (const auto& [qid, e] : entries_) {
    json j;
    j["qid"] = qid;
    j["samples"] = e.samples;
    if (!e.confidences.empty()) j["confidences"] = e.confidences;
    out << j.dump() << "\n";
  }
}

const StatementCache::Entry& StatementCache::get(const std::string& qid) const {
  auto it = entries_.find(qid);
  if (it == entries_.end()) throw StageError("missing cached statements for qid " + qid);
  ++hits_;
  return it->second;
}

void StatementCache::put(const std::string& qid, std::vector<std::string> samples) {
  entries_[qid].samples = std::move(samples);
}

void StatementCache::set_confidences(const std::string& qid, std::vector<double> confidences) {
  auto it = entries_.find(qid);
  if (it == entries_.end()) throw StageError("missing cached statements for qid " + qid);
  if (confidences.size() != it->second.samples.size()) {
    throw StageError("confidence count mismatch for qid " + qid);
  }
  it->second.confidences = std::move(confidences);
}

bool StatementCache::has_confidences(const std::string& qid) const {
  auto it = entries_.find(qid);
  return it != entries_.end() && !it->second.confidences.empty();
}

}  // namespace iag
