// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "iag/beam.hpp"
#include "iag/distill.hpp"
#include "iag/generator.hpp"

namespace iag {

// Softmax over the hypotheses' differentiable sequence log-probabilities.
std::vector<ad::NodePtr> beam_score_softmax(const std::vector<DiffHypothesis>& hyps);

// eq6:              L = -log sum_n SG[feedback_n] * softmax(scores)_n
// alg1:             L = -sum_n zsoftmax(feedback)_n * softmax(scores)_n
// eq6_unnormalized: L = -log sum_n SG[feedback_n] * exp(score_n)
enum class TailbackVariant { eq6, alg1, eq6_unnormalized };

const char* to_string(TailbackVariant v);
TailbackVariant tailback_variant_from_string(const std::string& s);

struct TailbackBatchTrace {
  std::string qid;
  std::vector<DiffHypothesis> hypotheses;
  std::vector<double> feedback;     // SG'd generator probabilities, in (0,1)
  std::vector<ad::NodePtr> scores;  // softmaxed beam scores (empty for eq6_unnormalized)
  ad::NodePtr loss;
};

// Combines hypotheses and already-detached feedback into the variant's loss.
// Exposed separately so the loss algebra can be exercised with controlled
// scores and feedback values.
TailbackBatchTrace tailback_combine(const std::vector<DiffHypothesis>& hyps,
                                    const std::vector<double>& feedback, TailbackVariant variant);

// Builds the per-question loss: differentiable beam search for N statements,
// frozen-generator feedback per hypothesis, then the variant's combination.
// Gradients reach only the inductor.
TailbackBatchTrace tailback_loss(const Seq2SeqModel& inductor, const Seq2SeqModel& gen,
                                 const Vocab& vocab, const QAExample& q,
                                 const std::vector<Document>& documents, int n_statements,
                                 int max_statement_len, TailbackVariant variant);

struct TailbackConfig {
  long iterations = 300;
  int n_statements = 5;
  int max_statement_len = 24;
  TailbackVariant variant = TailbackVariant::eq6;
  double lr = 3e-4;
  long warmup_steps = 0;
  long eval_every = 0;  // 0 = only at the end
  std::uint64_t seed = 1;
  std::string trace_path;  // CSV; empty = no trace file
};

struct TailbackStats {
  std::vector<double> losses;
  std::vector<double> mean_feedback;
  std::vector<double> top_feedback;
  std::vector<std::pair<long, double>> eval_points;  // (iteration, held-out accuracy)
};

// Step-2 optimization loop. The generator is read-only throughout.
TailbackStats tailback_train(Seq2SeqModel& inductor, const Seq2SeqModel& gen, const Vocab& vocab,
                             const std::vector<QAExample>& train_set,
                             const std::vector<QAExample>& dev_set,
                             const std::map<std::string, std::vector<Document>>& docs_by_qid,
                             const TailbackConfig& cfg);

// Samples n statements from the trained inductor at the given temperature.
std::vector<KnowledgeStatement> sample_student_statements(const Seq2SeqModel& inductor,
                                                          const Vocab& vocab,
                                                          const std::string& question, int n,
                                                          double temperature, int max_len,
                                                          std::uint64_t seed);

// Final stage: fine-tunes the generator on retrieved documents plus statements
// sampled from the trained inductor. n_statements = 0 degenerates to
// retrieval-only fine-tuning.
TrainStats finalize_generator(Seq2SeqModel& gen, const Seq2SeqModel& inductor, const Vocab& vocab,
                              const std::vector<QAExample>& train_set,
                              const std::map<std::string, std::vector<Document>>& docs_by_qid,
                              int n_statements, double temperature, int max_statement_len,
                              const TrainConfig& cfg);

// End-task accuracy of generator + live inductor statements on a dataset.
double end_task_accuracy(const Seq2SeqModel& gen, const Seq2SeqModel& inductor, const Vocab& vocab,
                         const std::vector<QAExample>& dataset,
                         const std::map<std::string, std::vector<Document>>& docs_by_qid,
                         int n_statements, int max_statement_len);

}  // namespace iag
