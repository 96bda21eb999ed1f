// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "iag/types.hpp"

namespace iag {

// JSONL dataset loader. One object per line:
//   {"qid": str, "question": str, "answer": true|false|"yes"|"no", "facts": [str] optional}
// Malformed lines and duplicate qids raise errors naming the line.
std::vector<QAExample> load_dataset(const std::string& path);
void save_dataset(const std::vector<QAExample>& dataset, const std::string& path);

// Corpus JSONL: {"doc_id": str, "text": str}.
std::vector<Document> load_corpus(const std::string& path);
void save_corpus(const std::vector<Document>& corpus, const std::string& path);

// Teacher table JSONL: {"qid": str, "knowledge": str}.
std::map<std::string, KnowledgeStatement> load_teacher_table(const std::string& path);
void save_teacher_table(const std::map<std::string, KnowledgeStatement>& table,
                        const std::string& path);

}  // namespace iag
