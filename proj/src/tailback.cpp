// SPDX-License-Identifier: Apache-2.0
#include "iag/tailback.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>

#include "iag/optim.hpp"

namespace iag {

std::vector<ad::NodePtr> beam_score_softmax(const std::vector<DiffHypothesis>& hyps) {
  if (hyps.empty()) throw StageError("beam_score_softmax: empty hypothesis list");
  std::vector<ad::NodePtr> scores;
  scores.reserve(hyps.size());
  for (const auto& h : hyps) scores.push_back(h.score_node);
  auto s = ad::softmax_rows(ad::concat_cols(scores));
  std::vector<ad::NodePtr> out;
  out.reserve(hyps.size());
  for (size_t i = 0; i < hyps.size(); ++i) out.push_back(ad::pick(s, 0, static_cast<int>(i)));
  return out;
}

const char* to_string(TailbackVariant v) {
  switch (v) {
    case TailbackVariant::eq6: return "eq6";
    case TailbackVariant::alg1: return "alg1";
    case TailbackVariant::eq6_unnormalized: return "eq6_unnormalized";
  }
  return "?";
}

TailbackVariant tailback_variant_from_string(const std::string& s) {
  if (s == "eq6") return TailbackVariant::eq6;
  if (s == "alg1") return TailbackVariant::alg1;
  if (s == "eq6_unnormalized") return TailbackVariant::eq6_unnormalized;
  throw ConfigError("unknown tailback variant: " + s);
}

TailbackBatchTrace tailback_combine(const std::vector<DiffHypothesis>& hyps,
                                    const std::vector<double>& feedback, TailbackVariant variant) {
  if (hyps.empty() || hyps.size() != feedback.size()) {
    throw StageError("tailback_combine: hypothesis/feedback size mismatch");
  }
  TailbackBatchTrace trace;
  trace.hypotheses = hyps;
  trace.feedback = feedback;
  if (variant == TailbackVariant::eq6 || variant == TailbackVariant::alg1) {
    trace.scores = beam_score_softmax(trace.hypotheses);
  }
  ad::NodePtr combined;
  switch (variant) {
    case TailbackVariant::eq6: {
      for (size_t i = 0; i < trace.scores.size(); ++i) {
        auto term = ad::scale(trace.scores[i], static_cast<real_t>(trace.feedback[i]));
        combined = combined ? ad::add(combined, term) : term;
      }
      trace.loss = ad::scale(ad::log(combined), -1);
      break;
    }
    case TailbackVariant::alg1: {
      // Eq. 2-normalized feedback; negated so high-feedback beams gain mass.
      auto tilde = normalize_confidences(trace.feedback);
      for (size_t i = 0; i < trace.scores.size(); ++i) {
        auto term = ad::scale(trace.scores[i], static_cast<real_t>(tilde.normalized[i]));
        combined = combined ? ad::add(combined, term) : term;
      }
      trace.loss = ad::scale(combined, -1);
      break;
    }
    case TailbackVariant::eq6_unnormalized: {
      for (size_t i = 0; i < trace.hypotheses.size(); ++i) {
        auto prob = ad::exp(trace.hypotheses[i].score_node);
        auto term = ad::scale(prob, static_cast<real_t>(trace.feedback[i]));
        combined = combined ? ad::add(combined, term) : term;
      }
      trace.loss = ad::scale(ad::log(combined), -1);
      break;
    }
  }
  return trace;
}

TailbackBatchTrace tailback_loss(const Seq2SeqModel& inductor, const Seq2SeqModel& gen,
                                 const Vocab& vocab, const QAExample& q,
                                 const std::vector<Document>& documents, int n_statements,
                                 int max_statement_len, TailbackVariant variant) {
  if (n_statements < 1) throw StageError("tailback_loss: n_statements must be >= 1");
  auto hyps =
      differentiable_beam_search(inductor, vocab.encode(q.question), n_statements, max_statement_len);

  bool all_same = true;
  for (size_t i = 1; i < hyps.size(); ++i) {
    all_same = all_same && hyps[i].tokens == hyps[0].tokens;
  }
  if (all_same && hyps.size() > 1) {
    std::cerr << "[warn] tailback: all beam hypotheses identical for qid " << q.qid << "\n";
  }

  // Frozen-generator feedback: p(a* | gen, q, K_n, R), detached by construction.
  std::vector<double> feedback;
  feedback.reserve(hyps.size());
  {
    ad::NoGradGuard ng;
    for (const auto& h : hyps) {
      EvidenceSet ev;
      ev.question = q;
      ev.documents = documents;
      KnowledgeStatement ks;
      ks.text = vocab.decode(h.tokens);
      ks.source = StatementSource::student;
      ev.statements = {std::move(ks)};
      feedback.push_back(std::exp(answer_log_prob(gen, vocab, ev, q.answer)->scalar()));
    }
  }
  auto trace = tailback_combine(hyps, feedback, variant);
  trace.qid = q.qid;
  return trace;
}

std::vector<KnowledgeStatement> sample_student_statements(const Seq2SeqModel& inductor,
                                                          const Vocab& vocab,
                                                          const std::string& question, int n,
                                                          double temperature, int max_len,
                                                          std::uint64_t seed) {
  std::vector<KnowledgeStatement> out;
  out.reserve(static_cast<size_t>(n));
  auto src = vocab.encode(question);
  for (int i = 0; i < n; ++i) {
    auto toks =
        inductor.sample_decode(src, max_len, temperature, mix_seed(seed, question, static_cast<std::uint64_t>(i)));
    KnowledgeStatement ks;
    ks.text = vocab.decode(toks);
    ks.source = StatementSource::student;
    out.push_back(std::move(ks));
  }
  return out;
}

double end_task_accuracy(const Seq2SeqModel& gen, const Seq2SeqModel& inductor, const Vocab& vocab,
                         const std::vector<QAExample>& dataset,
                         const std::map<std::string, std::vector<Document>>& docs_by_qid,
                         int n_statements, int max_statement_len) {
  if (dataset.empty()) return 0.0;
  long correct = 0;
  for (const auto& ex : dataset) {
    auto hyps = beam_search(inductor, vocab.encode(ex.question), n_statements, max_statement_len);
    EvidenceSet ev;
    ev.question = ex;
    auto it = docs_by_qid.find(ex.qid);
    if (it != docs_by_qid.end()) ev.documents = it->second;
    for (const auto& h : hyps) {
      KnowledgeStatement ks;
      ks.text = vocab.decode(h.tokens);
      ks.source = StatementSource::student;
      ks.seq_log_prob = h.score;
      ev.statements.push_back(std::move(ks));
    }
    if (predict(gen, vocab, ev).label == ex.answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

TailbackStats tailback_train(Seq2SeqModel& inductor, const Seq2SeqModel& gen, const Vocab& vocab,
                             const std::vector<QAExample>& train_set,
                             const std::vector<QAExample>& dev_set,
                             const std::map<std::string, std::vector<Document>>& docs_by_qid,
                             const TailbackConfig& cfg) {
  if (train_set.empty()) throw StageError("tailback_train: empty training set");
  TailbackStats stats;
  std::ofstream trace;
  if (!cfg.trace_path.empty()) {
    trace.open(cfg.trace_path, std::ios::binary);
    if (!trace) throw StageError("cannot write tailback trace: " + cfg.trace_path);
    trace << "iteration,loss,mean_feedback,top_feedback,heldout_accuracy\n";
  }

  auto params = inductor.params();
  AdamState adam;
  zero_grad(params);
  std::mt19937_64 pick_rng(mix_seed(cfg.seed, "tailback-sample"));

  for (long it = 0; it < cfg.iterations; ++it) {
    const auto& ex = train_set[pick_rng() % train_set.size()];
    auto docs_it = docs_by_qid.find(ex.qid);
    if (docs_it == docs_by_qid.end()) {
      throw StageError("tailback_train: no documents for qid " + ex.qid);
    }
    auto batch = tailback_loss(inductor, gen, vocab, ex, docs_it->second, cfg.n_statements,
                               cfg.max_statement_len, cfg.variant);
    const double lv = batch.loss->scalar();
    if (!std::isfinite(lv)) {
      throw StageError("tailback_train: non-finite loss at qid " + ex.qid);
    }
    ad::backward(batch.loss);
    adam_step(params, adam, static_cast<real_t>(warmup_lr(cfg.lr, it, cfg.warmup_steps)));
    zero_grad(params);

    double mean_fb = 0.0;
    for (double f : batch.feedback) mean_fb += f;
    mean_fb /= static_cast<double>(batch.feedback.size());
    stats.losses.push_back(lv);
    stats.mean_feedback.push_back(mean_fb);
    stats.top_feedback.push_back(batch.feedback.front());

    const bool eval_now =
        (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) || it + 1 == cfg.iterations;
    double heldout = -1.0;
    if (eval_now && !dev_set.empty()) {
      heldout = end_task_accuracy(gen, inductor, vocab, dev_set, docs_by_qid, cfg.n_statements,
                                  cfg.max_statement_len);
      stats.eval_points.emplace_back(it + 1, heldout);
    }
    if (trace.is_open()) {
      trace << it + 1 << "," << lv << "," << mean_fb << "," << batch.feedback.front() << ",";
      if (heldout >= 0.0) trace << heldout;
      trace << "\n";
    }
  }
  return stats;
}

TrainStats finalize_generator(Seq2SeqModel& gen, const Seq2SeqModel& inductor, const Vocab& vocab,
                              const std::vector<QAExample>& train_set,
                              const std::map<std::string, std::vector<Document>>& docs_by_qid,
                              int n_statements, double temperature, int max_statement_len,
                              const TrainConfig& cfg) {
  std::vector<EvidenceSet> evidence;
  evidence.reserve(train_set.size());
  for (const auto& ex : train_set) {
    EvidenceSet ev;
    ev.question = ex;
    auto it = docs_by_qid.find(ex.qid);
    if (it != docs_by_qid.end()) ev.documents = it->second;
    if (n_statements > 0) {
      ev.statements = sample_student_statements(inductor, vocab, ex.question, n_statements,
                                                temperature, max_statement_len,
                                                mix_seed(cfg.seed, "finalize-stmt"));
    }
    evidence.push_back(std::move(ev));
  }
  return finetune_generator(gen, vocab, evidence, EvidenceMode::both, cfg);
}

}  // namespace iag
