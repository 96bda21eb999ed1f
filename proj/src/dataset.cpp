// SPDX-License-Identifier: Apache-2.0
#include "iag/dataset.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace iag {

using nlohmann::json;

namespace {

json parse_line(const std::string& line, const std::string& path, long line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed JSONL record");
  }
  return j;
}

std::string require_string(const json& j, const char* key, const std::string& path, long line_no) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw ConfigError(path + ":" + std::to_string(line_no) + ": missing or non-string \"" +
                      key + "\"");
  }
  return j.at(key).get<std::string>();
}

}  // namespace

std::vector<QAExample> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("dataset file not found: " + path);
  std::vector<QAExample> out;
  std::set<std::string> seen;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(line, path, line_no);
    QAExample ex;
    ex.qid = require_string(j, "qid", path, line_no);
    ex.question = require_string(j, "question", path, line_no);
    if (ex.question.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty question");
    }
    if (!seen.insert(ex.qid).second) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate qid \"" + ex.qid +
                        "\"");
    }
    if (!j.contains("answer")) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": missing \"answer\"");
    }
    const json& a = j.at("answer");
    if (a.is_boolean()) {
      ex.answer = a.get<bool>() ? Label::yes : Label::no;
    } else if (a.is_string()) {
      try {
        ex.answer = label_from_string(a.get<std::string>());
      } catch (const ConfigError&) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": answer must be yes/no");
      }
    } else {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": answer must be bool or string");
    }
    if (j.contains("facts")) {
      if (!j.at("facts").is_array()) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": \"facts\" must be an array");
      }
      for (const auto& f : j.at("facts")) {
        if (!f.is_string()) {
          throw ConfigError(path + ":" + std::to_string(line_no) + ": facts entries must be strings");
        }
        ex.facts.push_back(f.get<std::string>());
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const std::vector<QAExample>& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write dataset file: " + path);
  for (const auto& ex : dataset) {
    json j;
    j["qid"] = ex.qid;
    j["question"] = ex.question;
    j["answer"] = to_string(ex.answer);
    if (!ex.facts.empty()) j["facts"] = ex.facts;
    out << j.dump() << "\n";
  }
}

std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("corpus file not found: " + path);
  std::vector<Document> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(line, path, line_no);
    Document d;
    d.doc_id = require_string(j, "doc_id", path, line_no);
    d.text = require_string(j, "text", path, line_no);
    if (d.text.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty document text");
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_corpus(const std::vector<Document>& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write corpus file: " + path);
  for (const auto& d : corpus) {
    json j;
    j["doc_id"] = d.doc_id;
    j["text"] = d.text;
    out << j.dump() << "\n";
  }
}

std::map<std::string, KnowledgeStatement> load_teacher_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("teacher table file not found: " + path);
  std::map<std::string, KnowledgeStatement> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_line(line, path, line_no);
    KnowledgeStatement ks;
    ks.text = require_string(j, "knowledge", path, line_no);
    ks.source = StatementSource::gold;
    out[require_string(j, "qid", path, line_no)] = std::move(ks);
  }
  return out;
}

void save_teacher_table(const std::map<std::string, KnowledgeStatement>& table,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write teacher table file: " + path);
  for (const auto& [qid, ks] : table) {
    json j;
    j["qid"] = qid;
    j["knowledge"] = ks.text;
    out << j.dump() << "\n";
  }
}

}  // namespace iag
