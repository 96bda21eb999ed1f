// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "iag/types.hpp"

namespace iag {

// Parameters of the synthetic hypernym-QA benchmark. Every entity belongs to
// one hypernym class; each (entity, property) pair yields one yes/no question
// whose answer is decided by the hypernym's property table.
struct SynthSpec {
  int n_entities = 48;
  int n_hypernyms = 6;
  int analogs_per_entity = 2;
  int n_properties = 5;
  int distractor_docs = 2;
  double gold_doc_rate = 0.5;
  double teacher_noise_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthOutput {
  std::vector<QAExample> dataset;
  std::vector<Document> corpus;
  // qid -> gold (or noise-corrupted) inductive statement.
  std::map<std::string, KnowledgeStatement> teacher_table;
  // Ground truth kept for label-consistency checks.
  std::vector<std::string> hypernyms;
  std::map<std::string, std::string> entity_hypernym;
  std::map<std::string, std::map<std::string, bool>> property_table;
};

// Deterministic in spec.seed: two calls with equal specs produce byte-identical
// serialized artifacts.
SynthOutput synth_generate(const SynthSpec& spec);

// Recomputes every answer from the hypernym/property tables; throws on the
// first mismatch with the stored label.
void synth_check_label_consistency(const SynthOutput& out);

}  // namespace iag
