// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "iag/generator.hpp"
#include "iag/statement_cache.hpp"

namespace iag {

// Confidence normalization: z-score by the population standard deviation,
// then softmax. Degenerate sigma = 0 yields the uniform distribution.
struct ConfidenceSet {
  std::vector<double> raw;
  double mean = 0.0;
  double std_dev = 0.0;
  std::vector<double> normalized;
};

ConfidenceSet normalize_confidences(const std::vector<double>& raw);

// Probability of the ground-truth answer when the statement rides along the
// retrieved documents as extra evidence.
double confidence(const Seq2SeqModel& gen, const Vocab& vocab, const QAExample& q,
                  const KnowledgeStatement& statement, const std::vector<Document>& documents);

enum class DistillStrategy { q_all, q_max, q_weight };

const char* to_string(DistillStrategy s);
DistillStrategy distill_strategy_from_string(const std::string& s);

// q_max:    NLL of the argmax-confidence statement (ties -> lowest index)
// q_weight: confidence-weighted sum of per-statement NLLs
// q_all:    unweighted sum of per-statement NLLs
ad::NodePtr distill_loss(DistillStrategy strategy, const Seq2SeqModel& inductor,
                         const Vocab& vocab, const QAExample& q,
                         const std::vector<std::string>& statements,
                         const ConfidenceSet* confidences);

// Target tokenization shared by loss and evaluation: statement words + EOS.
TokenSeq statement_target(const Vocab& vocab, const std::string& text);

// Fills missing confidences in the cache, one pass per question, with the
// generator frozen.
void compute_confidences(const Seq2SeqModel& gen, const Vocab& vocab,
                         const std::vector<QAExample>& dataset,
                         const std::map<std::string, std::vector<Document>>& docs_by_qid,
                         StatementCache& cache);

// Warmup training of the inductor from cached teacher statements. Emits
// per-epoch held-out statement NLL into stats.eval_points. use_first_n > 0
// restricts each question to its first n cached samples (the distillation N
// may be smaller than the cache depth).
TrainStats distill_train(Seq2SeqModel& inductor, const Vocab& vocab,
                         const std::vector<QAExample>& train_set,
                         const std::vector<QAExample>& dev_set, const StatementCache& cache,
                         DistillStrategy strategy, const TrainConfig& cfg, int use_first_n = 0);

}  // namespace iag
