// SPDX-License-Identifier: Apache-2.0
#include "iag/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "iag/vocab.hpp"

namespace iag {

Bm25Index Bm25Index::build(const std::vector<Document>& corpus, double k1, double b) {
  if (corpus.empty()) throw ConfigError("build_index: empty corpus");
  if (k1 <= 0.0) throw ConfigError("build_index: k1 must be > 0");
  if (b < 0.0 || b > 1.0) throw ConfigError("build_index: b must be in [0,1]");

  Bm25Index idx;
  idx.k1_ = k1;
  idx.b_ = b;
  double total_len = 0.0;
  for (const auto& doc : corpus) {
    auto terms = split_words(doc.text);
    if (terms.empty()) throw ConfigError("build_index: document has no tokens: " + doc.doc_id);
    if (idx.id_to_index_.count(doc.doc_id)) {
      throw ConfigError("build_index: duplicate doc_id: " + doc.doc_id);
    }
    size_t di = idx.docs_.size();
    idx.id_to_index_[doc.doc_id] = di;
    idx.docs_.push_back({doc.doc_id, doc.text, static_cast<long>(terms.size())});
    total_len += static_cast<double>(terms.size());
    std::map<std::string, long> tf;
    for (auto& t : terms) ++tf[t];
    for (auto& [t, n] : tf) idx.postings_[t].emplace_back(di, n);
  }
  idx.avg_len_ = total_len / static_cast<double>(idx.docs_.size());
  return idx;
}

size_t Bm25Index::doc_index(const std::string& doc_id) const {
  auto it = id_to_index_.find(doc_id);
  if (it == id_to_index_.end()) throw ConfigError("bm25: unknown doc_id: " + doc_id);
  return it->second;
}

long Bm25Index::doc_freq(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : static_cast<long>(it->second.size());
}

double Bm25Index::score_doc(const std::vector<std::string>& query_terms, size_t di) const {
  const double n_docs = static_cast<double>(docs_.size());
  const double len = static_cast<double>(docs_[di].length);
  double total = 0.0;
  for (const auto& term : query_terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    auto pit = std::lower_bound(plist.begin(), plist.end(), di,
                                [](const auto& pr, size_t v) { return pr.first < v; });
    if (pit == plist.end() || pit->first != di) continue;
    const double tf = static_cast<double>(pit->second);
    const double df = static_cast<double>(plist.size());
    const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
    total += idf * tf * (k1_ + 1.0) / (tf + k1_ * (1.0 - b_ + b_ * len / avg_len_));
  }
  return total;
}

double Bm25Index::score(const std::string& query, const std::string& doc_id) const {
  return score_doc(split_words(query), doc_index(doc_id));
}

std::vector<Document> Bm25Index::retrieve(const std::string& query, int k) const {
  if (k < 1) throw ConfigError("retrieve: k must be >= 1");
  auto terms = split_words(query);
  std::vector<std::pair<double, size_t>> scored(docs_.size());
  for (size_t i = 0; i < docs_.size(); ++i) scored[i] = {score_doc(terms, i), i};
  std::sort(scored.begin(), scored.end(), [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return docs_[a.second].doc_id < docs_[b.second].doc_id;
  });
  size_t take = std::min<size_t>(static_cast<size_t>(k), scored.size());
  std::vector<Document> out;
  out.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    out.push_back({docs_[scored[i].second].doc_id, docs_[scored[i].second].text, scored[i].first});
  }
  return out;
}

void Bm25Index::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write index file: " + path);
  nlohmann::json hdr;
  hdr["format"] = "bm25-index";
  hdr["version"] = 1;
  hdr["k1"] = k1_;
  hdr["b"] = b_;
  hdr["doc_count"] = docs_.size();
  out << hdr.dump() << "\n";
  for (const auto& d : docs_) {
    nlohmann::json j;
    j["doc_id"] = d.doc_id;
    j["text"] = d.text;
    out << j.dump() << "\n";
  }
}

Bm25Index Bm25Index::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("index file not found: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("index file empty: " + path);
  nlohmann::json hdr = nlohmann::json::parse(line, nullptr, false);
  if (hdr.is_discarded() || hdr.value("format", "") != "bm25-index" || hdr.value("version", 0) != 1) {
    throw ConfigError("index file has unknown header: " + path);
  }
  std::vector<Document> corpus;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ConfigError("index file corrupt: " + path);
    corpus.push_back({j.at("doc_id").get<std::string>(), j.at("text").get<std::string>(), 0.0});
  }
  auto idx = build(corpus, hdr.at("k1").get<double>(), hdr.at("b").get<double>());
  if (idx.doc_count() != hdr.at("doc_count").get<int>()) {
    throw ConfigError("index file corrupt: doc count mismatch: " + path);
  }
  return idx;
}

}  // namespace iag
