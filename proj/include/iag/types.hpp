// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iag/util.hpp"

namespace iag {

enum class Label { yes, no };

inline const char* to_string(Label a) { return a == Label::yes ? "yes" : "no"; }

inline Label label_from_string(const std::string& s) {
  if (s == "yes") return Label::yes;
  if (s == "no") return Label::no;
  throw ConfigError("invalid answer label: '" + s + "'");
}

// One question-answer pair. Answers are binary; facts may be empty.
struct QAExample {
  std::string qid;
  std::string question;
  Label answer = Label::no;
  std::vector<std::string> facts;
};

// One retrieved passage with its retrieval score.
struct Document {
  std::string doc_id;
  std::string text;
  double score = 0.0;
};

enum class StatementSource { teacher, student, gold };

inline const char* to_string(StatementSource s) {
  switch (s) {
    case StatementSource::teacher: return "teacher";
    case StatementSource::student: return "student";
    case StatementSource::gold: return "gold";
  }
  return "?";
}

// One inductive knowledge statement used as evidence. seq_log_prob is only
// populated for student-generated statements (the beam score); confidence is
// populated once the generator has scored the statement set for a question.
struct KnowledgeStatement {
  std::string text;
  StatementSource source = StatementSource::teacher;
  std::optional<double> seq_log_prob;
  std::optional<double> confidence;
};

}  // namespace iag
