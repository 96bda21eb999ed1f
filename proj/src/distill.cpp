// SPDX-License-Identifier: Apache-2.0
#include "iag/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "iag/optim.hpp"

namespace iag {

ConfidenceSet normalize_confidences(const std::vector<double>& raw) {
  if (raw.empty()) throw StageError("normalize_confidences: empty input");
  for (double x : raw) {
    if (!std::isfinite(x)) throw StageError("normalize_confidences: non-finite input");
  }
  ConfidenceSet cs;
  cs.raw = raw;
  const double n = static_cast<double>(raw.size());
  cs.mean = std::accumulate(raw.begin(), raw.end(), 0.0) / n;
  double var = 0.0;
  for (double x : raw) var += (x - cs.mean) * (x - cs.mean);
  cs.std_dev = std::sqrt(var / n);
  cs.normalized.resize(raw.size());
  if (cs.std_dev == 0.0) {
    std::fill(cs.normalized.begin(), cs.normalized.end(), 1.0 / n);
    return cs;
  }
  double mx = -1e300;
  std::vector<double> z(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    z[i] = (raw[i] - cs.mean) / cs.std_dev;
    mx = std::max(mx, z[i]);
  }
  double denom = 0.0;
  for (size_t i = 0; i < raw.size(); ++i) {
    cs.normalized[i] = std::exp(z[i] - mx);
    denom += cs.normalized[i];
  }
  for (auto& v : cs.normalized) v /= denom;
  return cs;
}

double confidence(const Seq2SeqModel& gen, const Vocab& vocab, const QAExample& q,
                  const KnowledgeStatement& statement, const std::vector<Document>& documents) {
  ad::NoGradGuard ng;
  EvidenceSet ev;
  ev.question = q;
  ev.documents = documents;
  ev.statements = {statement};
  return std::exp(answer_log_prob(gen, vocab, ev, q.answer)->scalar());
}

const char* to_string(DistillStrategy s) {
  switch (s) {
    case DistillStrategy::q_all: return "q_all";
    case DistillStrategy::q_max: return "q_max";
    case DistillStrategy::q_weight: return "q_weight";
  }
  return "?";
}

DistillStrategy distill_strategy_from_string(const std::string& s) {
  if (s == "q_all") return DistillStrategy::q_all;
  if (s == "q_max") return DistillStrategy::q_max;
  if (s == "q_weight") return DistillStrategy::q_weight;
  throw ConfigError("unknown distill strategy: " + s);
}

TokenSeq statement_target(const Vocab& vocab, const std::string& text) {
  TokenSeq t = vocab.encode(text);
  t.ids.push_back(Vocab::kEos);
  return t;
}

ad::NodePtr distill_loss(DistillStrategy strategy, const Seq2SeqModel& inductor,
                         const Vocab& vocab, const QAExample& q,
                         const std::vector<std::string>& statements,
                         const ConfidenceSet* confidences) {
  if (statements.empty()) throw StageError("distill_loss: empty statement list for qid " + q.qid);
  const bool needs_conf = strategy != DistillStrategy::q_all;
  if (needs_conf) {
    if (confidences == nullptr || confidences->normalized.size() != statements.size()) {
      throw StageError("distill_loss: confidences missing for qid " + q.qid);
    }
  }
  auto enc = inductor.encode(vocab.encode(q.question));
  if (strategy == DistillStrategy::q_max) {
    size_t best = 0;
    for (size_t i = 1; i < statements.size(); ++i) {
      if (confidences->normalized[i] > confidences->normalized[best]) best = i;
    }
    return inductor.nll_from_encoding(enc, statement_target(vocab, statements[best]));
  }
  ad::NodePtr total;
  for (size_t i = 0; i < statements.size(); ++i) {
    auto nll = inductor.nll_from_encoding(enc, statement_target(vocab, statements[i]));
    if (strategy == DistillStrategy::q_weight) {
      nll = ad::scale(nll, static_cast<real_t>(confidences->normalized[i]));
    }
    total = total ? ad::add(total, nll) : nll;
  }
  return total;
}

void compute_confidences(const Seq2SeqModel& gen, const Vocab& vocab,
                         const std::vector<QAExample>& dataset,
                         const std::map<std::string, std::vector<Document>>& docs_by_qid,
                         StatementCache& cache) {
  for (const auto& ex : dataset) {
    if (cache.has_confidences(ex.qid)) continue;
    const auto& entry = cache.get(ex.qid);
    auto docs_it = docs_by_qid.find(ex.qid);
    if (docs_it == docs_by_qid.end()) {
      throw StageError("compute_confidences: no documents for qid " + ex.qid);
    }
    std::vector<double> raw;
    raw.reserve(entry.samples.size());
    for (const auto& text : entry.samples) {
      KnowledgeStatement ks;
      ks.text = text;
      ks.source = StatementSource::teacher;
      raw.push_back(confidence(gen, vocab, ex, ks, docs_it->second));
    }
    cache.set_confidences(ex.qid, std::move(raw));
  }
}

namespace {

std::vector<std::string> first_n_samples(const StatementCache::Entry& entry, int use_first_n) {
  if (use_first_n <= 0 || static_cast<size_t>(use_first_n) >= entry.samples.size()) {
    return entry.samples;
  }
  return {entry.samples.begin(), entry.samples.begin() + use_first_n};
}

double heldout_statement_nll(const Seq2SeqModel& inductor, const Vocab& vocab,
                             const std::vector<QAExample>& dev_set, const StatementCache& cache,
                             int use_first_n) {
  if (dev_set.empty()) return 0.0;
  ad::NoGradGuard ng;
  double total = 0.0;
  long count = 0;
  for (const auto& ex : dev_set) {
    auto samples = first_n_samples(cache.get(ex.qid), use_first_n);
    auto enc = inductor.encode(vocab.encode(ex.question));
    for (const auto& text : samples) {
      total += inductor.nll_from_encoding(enc, statement_target(vocab, text))->scalar();
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace

TrainStats distill_train(Seq2SeqModel& inductor, const Vocab& vocab,
                         const std::vector<QAExample>& train_set,
                         const std::vector<QAExample>& dev_set, const StatementCache& cache,
                         DistillStrategy strategy, const TrainConfig& cfg, int use_first_n) {
  TrainStats stats;
  // Per-question statement lists and confidence sets resolved once up front;
  // the generator is frozen during step 1, so these never change.
  std::vector<std::vector<std::string>> samples(train_set.size());
  std::vector<ConfidenceSet> conf(train_set.size());
  const bool needs_conf = strategy != DistillStrategy::q_all;
  for (size_t i = 0; i < train_set.size(); ++i) {
    const auto& entry = cache.get(train_set[i].qid);
    samples[i] = first_n_samples(entry, use_first_n);
    if (samples[i].empty()) {
      throw StageError("distill_train: empty sample list for qid " + train_set[i].qid);
    }
    if (needs_conf) {
      if (entry.confidences.size() < samples[i].size()) {
        throw StageError("distill_train: confidences not computed for qid " + train_set[i].qid);
      }
      conf[i] = normalize_confidences(
          {entry.confidences.begin(), entry.confidences.begin() + static_cast<long>(samples[i].size())});
    }
  }

  auto params = inductor.params();
  AdamState adam;
  zero_grad(params);
  long step = 0;
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, "distill-shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    long in_batch = 0;
    for (size_t oi = 0; oi < order.size(); ++oi) {
      const size_t i = order[oi];
      auto loss = distill_loss(strategy, inductor, vocab, train_set[i], samples[i],
                               needs_conf ? &conf[i] : nullptr);
      const double lv = loss->scalar();
      if (!std::isfinite(lv)) {
        throw StageError("distill_train: non-finite loss at qid " + train_set[i].qid);
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
    stats.epoch_losses.push_back(epoch_loss / std::max<size_t>(1, order.size()));
    stats.eval_points.emplace_back(
        epoch, heldout_statement_nll(inductor, vocab, dev_set, cache, use_first_n));
  }
  return stats;
}

}  // namespace iag
