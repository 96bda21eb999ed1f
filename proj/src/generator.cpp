// SPDX-License-Identifier: Apache-2.0
#include "iag/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "iag/optim.hpp"

namespace iag {

const char* to_string(EvidenceMode m) {
  switch (m) {
    case EvidenceMode::retrieval_only: return "retrieval_only";
    case EvidenceMode::induction_only: return "induction_only";
    case EvidenceMode::both: return "both";
  }
  return "?";
}

EvidenceMode evidence_mode_from_string(const std::string& s) {
  if (s == "retrieval_only") return EvidenceMode::retrieval_only;
  if (s == "induction_only") return EvidenceMode::induction_only;
  if (s == "both") return EvidenceMode::both;
  throw ConfigError("unknown evidence mode: " + s);
}

EvidenceSet apply_mode(const EvidenceSet& ev, EvidenceMode mode) {
  EvidenceSet out;
  out.question = ev.question;
  if (mode != EvidenceMode::induction_only) out.documents = ev.documents;
  if (mode != EvidenceMode::retrieval_only) out.statements = ev.statements;
  return out;
}

FusedEncoding fuse_encode(const Seq2SeqModel& gen, const Vocab& vocab, const EvidenceSet& ev) {
  if (ev.documents.empty() && ev.statements.empty()) {
    throw StageError("fuse_encode: empty evidence set for qid " + ev.question.qid);
  }
  std::vector<std::string> segments;
  segments.reserve(ev.documents.size() + ev.statements.size());
  for (const auto& d : ev.documents) {
    segments.push_back("question: " + ev.question.question + " context: " + d.text);
  }
  for (const auto& s : ev.statements) {
    segments.push_back("question: " + ev.question.question + " context: " + s.text);
  }
  FusedEncoding fused;
  std::vector<ad::NodePtr> encoded;
  encoded.reserve(segments.size());
  for (const auto& seg : segments) {
    auto enc = gen.encode(vocab.encode(seg));
    fused.segment_lengths.push_back(enc->value.rows);
    encoded.push_back(std::move(enc));
  }
  fused.hidden = encoded.size() == 1 ? encoded[0] : ad::concat_rows(encoded);
  return fused;
}

namespace {

int answer_token(const Vocab& vocab, Label a) {
  int id = vocab.id_of(to_string(a));
  if (id == Vocab::kUnk) {
    throw StageError(std::string("vocab lacks answer token '") + to_string(a) + "'");
  }
  return id;
}

ad::NodePtr answer_log_prob_fused(const Seq2SeqModel& gen, const Vocab& vocab,
                                  const FusedEncoding& fused, Label answer) {
  TokenSeq tgt;
  tgt.ids = {answer_token(vocab, answer), Vocab::kEos};
  return ad::scale(gen.nll_from_encoding(fused.hidden, tgt), -1);
}

}  // namespace

ad::NodePtr answer_log_prob(const Seq2SeqModel& gen, const Vocab& vocab, const EvidenceSet& ev,
                            Label answer) {
  return answer_log_prob_fused(gen, vocab, fuse_encode(gen, vocab, ev), answer);
}

Prediction predict(const Seq2SeqModel& gen, const Vocab& vocab, const EvidenceSet& ev) {
  ad::NoGradGuard ng;
  auto fused = fuse_encode(gen, vocab, ev);
  Prediction p;
  p.log_prob_yes = answer_log_prob_fused(gen, vocab, fused, Label::yes)->scalar();
  p.log_prob_no = answer_log_prob_fused(gen, vocab, fused, Label::no)->scalar();
  p.label = p.log_prob_yes > p.log_prob_no ? Label::yes : Label::no;
  return p;
}

TrainStats finetune_generator(Seq2SeqModel& gen, const Vocab& vocab,
                              const std::vector<EvidenceSet>& dataset, EvidenceMode mode,
                              const TrainConfig& cfg) {
  if (dataset.empty()) throw StageError("finetune_generator: empty dataset");
  std::vector<EvidenceSet> filtered;
  filtered.reserve(dataset.size());
  for (const auto& ev : dataset) filtered.push_back(apply_mode(ev, mode));

  TrainStats stats;
  auto params = gen.params();
  AdamState adam;
  zero_grad(params);
  long step = 0;
  std::vector<size_t> order(filtered.size());
  std::iota(order.begin(), order.end(), 0);
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, "gen-shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long in_batch = 0;
    for (size_t oi = 0; oi < order.size(); ++oi) {
      const auto& ev = filtered[order[oi]];
      auto loss = ad::scale(answer_log_prob(gen, vocab, ev, ev.question.answer), -1);
      const double lv = loss->scalar();
      if (!std::isfinite(lv)) {
        throw StageError("finetune_generator: non-finite loss at qid " + ev.question.qid);
      }
      stats.step_losses.push_back(lv);
      epoch_loss += lv;
      ad::backward(loss);
      if (++in_batch >= cfg.batch_size || oi + 1 == order.size()) {
        adam_step(params, adam, static_cast<real_t>(warmup_lr(cfg.lr, step, cfg.warmup_steps)));
        zero_grad(params);
        in_batch = 0;
        ++step;
      }
    }
    stats.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return stats;
}

Label resolve_votes(int yes_votes, int no_votes, double sum_yes_prob, double sum_no_prob) {
  if (yes_votes != no_votes) return yes_votes > no_votes ? Label::yes : Label::no;
  if (sum_yes_prob != sum_no_prob) return sum_yes_prob > sum_no_prob ? Label::yes : Label::no;
  return Label::no;
}

Label self_consistency_predict(const Seq2SeqModel& gen, const Vocab& vocab,
                               const QAExample& question, const std::vector<Document>& documents,
                               const std::vector<KnowledgeStatement>& statements) {
  if (statements.empty()) throw StageError("self_consistency_predict: no statements");
  int yes_votes = 0, no_votes = 0;
  double sum_yes = 0.0, sum_no = 0.0;
  for (const auto& st : statements) {
    EvidenceSet ev;
    ev.question = question;
    ev.documents = documents;
    ev.statements = {st};
    auto p = predict(gen, vocab, ev);
    (p.label == Label::yes ? yes_votes : no_votes) += 1;
    sum_yes += std::exp(p.log_prob_yes);
    sum_no += std::exp(p.log_prob_no);
  }
  return resolve_votes(yes_votes, no_votes, sum_yes, sum_no);
}

}  // namespace iag
