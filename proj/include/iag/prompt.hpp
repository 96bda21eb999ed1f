// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "iag/types.hpp"

namespace iag {

enum class PromptStyle { inductive, trivial };

// Five-shot prompting template. The inductive demos walk the
// "target, analog, analog are hypernym; assertion about hypernym" reasoning
// path; the trivial demos state a single direct assertion.
struct PromptTemplate {
  std::vector<std::pair<std::string, std::string>> demos;  // (question, knowledge)
  PromptStyle style = PromptStyle::inductive;

  void validate() const;
};

PromptTemplate inductive_template();
PromptTemplate trivial_template();

// Byte-exact layout: each demo renders as "Question: {q}\nKnowledge: {k}\n###\n",
// followed by "Question: {question}\nKnowledge:".
std::string render_prompt(const PromptTemplate& tmpl, const std::string& question);

// Extracts the question back out of a rendered prompt (the text after the
// final "Question: " up to "\nKnowledge:").
std::string question_from_prompt(const std::string& prompt);

// Truncates at the first "###" or "Question:" marker and trims whitespace.
// Throws "empty knowledge" if nothing remains.
KnowledgeStatement parse_completion(const std::string& raw);

}  // namespace iag
