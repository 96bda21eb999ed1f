// SPDX-License-Identifier: Apache-2.0
#include "iag/prompt.hpp"

#include <algorithm>

#include "iag/util.hpp"

namespace iag {

void PromptTemplate::validate() const {
  if (demos.size() != 5) throw ConfigError("prompt template must carry exactly 5 demos");
  for (const auto& [q, k] : demos) {
    if (q.empty() || k.empty()) throw ConfigError("prompt template demo must be non-empty");
  }
}

PromptTemplate inductive_template() {
  PromptTemplate t;
  t.style = PromptStyle::inductive;
  t.demos = {
      {"It is safe to keep wolves as pets.",
       "Wolves, tigers and lions are wild animals. Wild animals are generally dangerous."},
      {"Bacon is healthy diet food.",
       "Bacon, chips and cakes are junk food. Junk food is not healthy."},
      {"Pens are more expensive than cars.",
       "Pens, erasers and paper are stationery. Stationery is cheaper than cars."},
      {"People make furniture out of oak.",
       "Oak, pine and beech are Wood. Wood can be used to make furniture."},
      {"Fridges are often used in the wild.",
       "Fridges, ovens and TVs are appliances. Appliances are used in houses."},
  };
  return t;
}

PromptTemplate trivial_template() {
  PromptTemplate t;
  t.style = PromptStyle::trivial;
  t.demos = {
      {"It is safe to keep wolves as pets.", "Wolves are dangerous."},
      {"Bacon is healthy diet food.", "Bacon is not healthy."},
      {"Pens are more expensive than cars.", "Pens are cheaper than cars."},
      {"People make furniture out of oak.", "Oak can be used to make furniture."},
      {"Fridges are often used in the wild.", "Fridges are used in houses."},
  };
  return t;
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& question) {
  tmpl.validate();
  if (question.empty()) throw ConfigError("render_prompt: empty question");
  std::string out;
  for (const auto& [q, k] : tmpl.demos) {
    out += "Question: " + q + "\nKnowledge: " + k + "\n###\n";
  }
  out += "Question: " + question + "\nKnowledge:";
  return out;
}

std::string question_from_prompt(const std::string& prompt) {
  const std::string q_marker = "Question: ";
  const std::string k_marker = "\nKnowledge:";
  auto q = prompt.rfind(q_marker);
  if (q == std::string::npos) throw ConfigError("prompt carries no question");
  auto start = q + q_marker.size();
  auto end = prompt.find(k_marker, start);
  if (end == std::string::npos) end = prompt.size();
  return prompt.substr(start, end - start);
}

KnowledgeStatement parse_completion(const std::string& raw) {
  size_t cut = raw.size();
  for (const char* marker : {"###", "Question:"}) {
    auto pos = raw.find(marker);
    if (pos != std::string::npos) cut = std::min(cut, pos);
  }
  std::string text = raw.substr(0, cut);
  auto first = text.find_first_not_of(" \t\r\n");
  auto last = text.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) throw ConfigError("empty knowledge");
  text = text.substr(first, last - first + 1);
  KnowledgeStatement ks;
  ks.text = std::move(text);
  ks.source = StatementSource::teacher;
  return ks;
}

}  // namespace iag
