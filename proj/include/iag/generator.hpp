// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "iag/seq2seq.hpp"
#include "iag/train.hpp"
#include "iag/types.hpp"

namespace iag {

// The M+N evidence collection the generator reasons over. Segment order has
// no answer-level semantics: fusion is order-invariant.
struct EvidenceSet {
  QAExample question;
  std::vector<Document> documents;
  std::vector<KnowledgeStatement> statements;
};

enum class EvidenceMode { retrieval_only, induction_only, both };

const char* to_string(EvidenceMode m);
EvidenceMode evidence_mode_from_string(const std::string& s);

// Copy with only the evidence the mode admits.
EvidenceSet apply_mode(const EvidenceSet& ev, EvidenceMode mode);

struct FusedEncoding {
  ad::NodePtr hidden;  // concatenated per-segment encoder outputs
  std::vector<int> segment_lengths;
};

// Encodes each evidence piece independently as "question: {q} context: {e}"
// with positions restarting at 0, then concatenates along the token axis.
FusedEncoding fuse_encode(const Seq2SeqModel& gen, const Vocab& vocab, const EvidenceSet& ev);

// log p(answer token) + log p(EOS) under the decoder conditioned on the fused
// evidence encoding.
ad::NodePtr answer_log_prob(const Seq2SeqModel& gen, const Vocab& vocab, const EvidenceSet& ev,
                            Label answer);

struct Prediction {
  Label label = Label::no;
  double log_prob_yes = 0.0;
  double log_prob_no = 0.0;
};

// Argmax over {yes, no}; exact ties resolve to "no".
Prediction predict(const Seq2SeqModel& gen, const Vocab& vocab, const EvidenceSet& ev);

// Minimizes answer NLL with Adam over the mode-filtered evidence sets.
TrainStats finetune_generator(Seq2SeqModel& gen, const Vocab& vocab,
                              const std::vector<EvidenceSet>& dataset, EvidenceMode mode,
                              const TrainConfig& cfg);

// Majority vote over per-statement predictions; vote ties go to the side with
// the larger summed answer probability, and a full tie resolves to "no".
Label self_consistency_predict(const Seq2SeqModel& gen, const Vocab& vocab,
                               const QAExample& question, const std::vector<Document>& documents,
                               const std::vector<KnowledgeStatement>& statements);

// Pure vote-resolution rule, exposed for direct testing.
Label resolve_votes(int yes_votes, int no_votes, double sum_yes_prob, double sum_no_prob);

}  // namespace iag
