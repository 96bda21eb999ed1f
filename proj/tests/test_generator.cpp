// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "iag/generator.hpp"
#include "iag/synth.hpp"
#include "test_util.hpp"

using namespace iag;

namespace {

struct Fixture {
  SynthOutput synth;
  Vocab vocab;
  std::map<std::string, std::vector<Document>> docs;

  explicit Fixture(double gold_doc_rate = 1.0, int entities = 20, int props = 4,
                   std::uint64_t seed = 11) {
    SynthSpec spec;
    spec.n_entities = entities;
    spec.n_hypernyms = 4;
    spec.n_properties = props;
    spec.distractor_docs = 1;
    spec.gold_doc_rate = gold_doc_rate;
    spec.teacher_noise_rate = 0.0;
    spec.seed = seed;
    synth = synth_generate(spec);
    std::vector<std::string> texts;
    for (const auto& ex : synth.dataset) texts.push_back(ex.question);
    for (const auto& d : synth.corpus) texts.push_back(d.text);
    for (const auto& [qid, ks] : synth.teacher_table) texts.push_back(ks.text);
    texts.push_back("yes no");
    vocab = Vocab::build(texts, 1);
    for (const auto& d : synth.corpus) {
      const auto qid = d.doc_id.substr(0, d.doc_id.find('_'));
      docs[qid].push_back(d);
    }
  }

  EvidenceSet evidence(const QAExample& ex, bool with_statement = false) const {
    EvidenceSet ev;
    ev.question = ex;
    auto it = docs.find(ex.qid);
    if (it != docs.end()) ev.documents = it->second;
    if (with_statement) {
      KnowledgeStatement ks = synth.teacher_table.at(ex.qid);
      ks.source = StatementSource::teacher;
      ev.statements.push_back(std::move(ks));
    }
    return ev;
  }
};

ModelConfig small_config(int vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_len = 32;
  return cfg;
}

void zero_output(Seq2SeqModel& model) {
  for (const auto& [name, node] : model.named_params()) {
    if (name == "w_out" || name == "b_out") node->value.fill(0);
  }
}

}  // namespace

TEST_CASE("single evidence fusion equals the plain encoder output") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 3);
  const auto& ex = f.synth.dataset[0];
  EvidenceSet ev = f.evidence(ex);
  ev.documents.resize(1);
  auto fused = fuse_encode(gen, f.vocab, ev);
  auto direct = gen.encode(f.vocab.encode("question: " + ex.question + " context: " +
                                          ev.documents[0].text));
  REQUIRE(fused.hidden->value.rows == direct->value.rows);
  for (size_t i = 0; i < fused.hidden->value.numel(); ++i) {
    CHECK(fused.hidden->value.data[i] == direct->value.data[i]);
  }
}

TEST_CASE("identical evidence pieces encode to identical blocks") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 5);
  const auto& ex = f.synth.dataset[1];
  EvidenceSet ev;
  ev.question = ex;
  Document d = f.docs.at(ex.qid)[0];
  ev.documents = {d, d};
  auto fused = fuse_encode(gen, f.vocab, ev);
  REQUIRE(fused.segment_lengths.size() == 2);
  REQUIRE(fused.segment_lengths[0] == fused.segment_lengths[1]);
  const int len = fused.segment_lengths[0];
  const int dm = gen.config().d_model;
  for (int r = 0; r < len; ++r) {
    for (int c = 0; c < dm; ++c) {
      CHECK(fused.hidden->value.at(r, c) == fused.hidden->value.at(r + len, c));
    }
  }
}

TEST_CASE("fused length is the sum of segment lengths") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 7);
  const auto& ex = f.synth.dataset[2];
  auto ev = f.evidence(ex, true);
  REQUIRE(ev.documents.size() + ev.statements.size() >= 3);
  auto fused = fuse_encode(gen, f.vocab, ev);
  int total = 0;
  for (int len : fused.segment_lengths) total += len;
  CHECK(fused.hidden->value.rows == total);
}

TEST_CASE("empty evidence set is an error") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 7);
  EvidenceSet ev;
  ev.question = f.synth.dataset[0];
  CHECK_THROWS_AS(fuse_encode(gen, f.vocab, ev), StageError);
}

TEST_CASE("uniform model gives answer log-prob 2 log(1/V)") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 9);
  zero_output(gen);
  auto lp = answer_log_prob(gen, f.vocab, f.evidence(f.synth.dataset[0]), Label::yes)->scalar();
  CHECK(std::abs(lp - 2.0 * std::log(1.0 / f.vocab.size())) < 1e-9);
}

TEST_CASE("answer probabilities are in (0,1) and jointly at most 1") {
  Fixture f;
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    Seq2SeqModel gen(small_config(f.vocab.size()), rng());
    auto ev = f.evidence(f.synth.dataset[rep]);
    const double py = std::exp(answer_log_prob(gen, f.vocab, ev, Label::yes)->scalar());
    const double pn = std::exp(answer_log_prob(gen, f.vocab, ev, Label::no)->scalar());
    CHECK(py > 0.0);
    CHECK(py < 1.0);
    CHECK(pn > 0.0);
    CHECK(pn < 1.0);
    CHECK(py + pn <= 1.0);
  }
}

TEST_CASE("answer_log_prob matches a step-by-step independent softmax oracle") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 15);
  const auto& ex = f.synth.dataset[4];
  auto ev = f.evidence(ex, true);
  const double got = answer_log_prob(gen, f.vocab, ev, Label::yes)->scalar();

  auto fused = fuse_encode(gen, f.vocab, ev);
  TokenSeq decoder_input;
  decoder_input.ids = {Vocab::kBos, f.vocab.id_of("yes")};
  auto logits = gen.decode_logits(fused.hidden, decoder_input);
  auto row_lp = [&](int row, int tok) {
    long double mx = logits->value.at(row, 0);
    for (int c = 1; c < logits->value.cols; ++c) {
      mx = std::max(mx, static_cast<long double>(logits->value.at(row, c)));
    }
    long double denom = 0;
    for (int c = 0; c < logits->value.cols; ++c) {
      denom += std::exp(static_cast<long double>(logits->value.at(row, c)) - mx);
    }
    return static_cast<double>(static_cast<long double>(logits->value.at(row, tok)) - mx -
                               std::log(denom));
  };
  const double want = row_lp(0, f.vocab.id_of("yes")) + row_lp(1, Vocab::kEos);
  CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("symmetric model predicts deterministic no on an exact tie") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 17);
  zero_output(gen);
  auto p = predict(gen, f.vocab, f.evidence(f.synth.dataset[0]));
  CHECK(p.log_prob_yes == p.log_prob_no);
  CHECK(p.label == Label::no);
}

TEST_CASE("prediction is invariant under evidence permutation") {
  Fixture f;
  std::mt19937_64 rng(19);
  Seq2SeqModel gen(small_config(f.vocab.size()), 21);
  for (int rep = 0; rep < 5; ++rep) {
    auto ev = f.evidence(f.synth.dataset[static_cast<size_t>(rep)], true);
    REQUIRE(ev.documents.size() >= 2);
    auto base = predict(gen, f.vocab, ev);
    EvidenceSet shuffled = ev;
    std::shuffle(shuffled.documents.begin(), shuffled.documents.end(), rng);
    std::reverse(shuffled.statements.begin(), shuffled.statements.end());
    auto perm = predict(gen, f.vocab, shuffled);
    CHECK(base.label == perm.label);
    CHECK(std::abs(base.log_prob_yes - perm.log_prob_yes) < 1e-9);
    CHECK(std::abs(base.log_prob_no - perm.log_prob_no) < 1e-9);
  }
}

TEST_CASE("retrieval-only mode ignores statements entirely") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 23);
  auto with = f.evidence(f.synth.dataset[0], true);
  auto without = f.evidence(f.synth.dataset[0], false);
  auto lp_with = answer_log_prob(gen, f.vocab, apply_mode(with, EvidenceMode::retrieval_only),
                                 Label::yes)
                     ->scalar();
  auto lp_without =
      answer_log_prob(gen, f.vocab, apply_mode(without, EvidenceMode::retrieval_only), Label::yes)
          ->scalar();
  CHECK(lp_with == lp_without);
}

TEST_CASE("training loss decreases monotonically over the first epoch") {
  Fixture f(1.0, 30, 5, 29);
  Seq2SeqModel gen(small_config(f.vocab.size()), 31);
  std::vector<EvidenceSet> train;
  for (const auto& ex : f.synth.dataset) train.push_back(f.evidence(ex));
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 6e-3;
  tc.warmup_steps = 5;
  tc.batch_size = 8;
  tc.seed = 5;
  auto stats = finetune_generator(gen, f.vocab, train, EvidenceMode::retrieval_only, tc);
  REQUIRE(stats.step_losses.size() == train.size());
  // per-optimizer-step means, then a 5-step moving average
  std::vector<double> batch_means;
  for (size_t i = 0; i + 8 <= stats.step_losses.size(); i += 8) {
    double mean = 0;
    for (size_t k = i; k < i + 8; ++k) mean += stats.step_losses[k];
    batch_means.push_back(mean / 8);
  }
  std::vector<double> ma;
  for (size_t i = 0; i + 5 <= batch_means.size(); ++i) {
    double mean = 0;
    for (size_t k = i; k < i + 5; ++k) mean += batch_means[k];
    ma.push_back(mean / 5);
  }
  REQUIRE(ma.size() >= 10);
  CHECK(ma.back() < ma.front());
  for (size_t i = 0; i + 1 < ma.size(); ++i) CHECK(ma[i + 1] < ma[i]);
}

TEST_CASE("generator fine-tuned on gold documents copies their polarity") {
  // Needs enough distinct (entity, property) pairs that following the document
  // beats memorizing the training questions.
  Fixture f(1.0, 30, 5, 37);
  auto splits = [&] {
    std::vector<EvidenceSet> train;
    std::vector<const QAExample*> held;
    for (size_t i = 0; i < f.synth.dataset.size(); ++i) {
      if (i % 3 != 2) {
        train.push_back(f.evidence(f.synth.dataset[i]));
      } else {
        held.push_back(&f.synth.dataset[i]);
      }
    }
    return std::pair(train, held);
  }();
  Seq2SeqModel gen(small_config(f.vocab.size()), 41);
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 3e-3;
  tc.warmup_steps = 20;
  tc.seed = 7;
  finetune_generator(gen, f.vocab, splits.first, EvidenceMode::retrieval_only, tc);
  long correct = 0;
  for (const auto* ex : splits.second) {
    if (predict(gen, f.vocab, f.evidence(*ex)).label == ex->answer) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(splits.second.size());
  CHECK(acc > 0.9);
}

TEST_CASE("training on shuffled labels stays at chance on held-out data") {
  double total_acc = 0;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Fixture f(1.0, 24, 5, 43 + seed);
    std::vector<EvidenceSet> train;
    std::vector<const QAExample*> held;
    for (size_t i = 0; i < f.synth.dataset.size(); ++i) {
      if (i % 2 == 0) {
        train.push_back(f.evidence(f.synth.dataset[i]));
      } else {
        held.push_back(&f.synth.dataset[i]);
      }
    }
    std::mt19937_64 rng(seed);
    for (auto& ev : train) {
      ev.question.answer = (rng() & 1) ? Label::yes : Label::no;
    }
    Seq2SeqModel gen(small_config(f.vocab.size()), 100 + seed);
    TrainConfig tc;
    tc.epochs = 2;
    tc.lr = 3e-3;
    tc.warmup_steps = 20;
    tc.seed = seed;
    finetune_generator(gen, f.vocab, train, EvidenceMode::retrieval_only, tc);
    long correct = 0;
    for (const auto* ex : held) {
      if (predict(gen, f.vocab, f.evidence(*ex)).label == ex->answer) ++correct;
    }
    total_acc += static_cast<double>(correct) / static_cast<double>(held.size());
  }
  const double mean_acc = total_acc / 3.0;
  CHECK(mean_acc > 0.4);
  CHECK(mean_acc < 0.6);
}

TEST_CASE("vote resolution: majority, degeneration and tie rules") {
  CHECK(resolve_votes(2, 1, 0.0, 0.0) == Label::yes);
  CHECK(resolve_votes(1, 2, 9.0, 0.1) == Label::no);
  CHECK(resolve_votes(2, 2, 1.3, 1.1) == Label::yes);
  CHECK(resolve_votes(2, 2, 1.1, 1.3) == Label::no);
  CHECK(resolve_votes(2, 2, 1.0, 1.0) == Label::no);
}

TEST_CASE("self-consistency equals single-statement predict when N = 1") {
  Fixture f;
  Seq2SeqModel gen(small_config(f.vocab.size()), 51);
  const auto& ex = f.synth.dataset[3];
  auto ev = f.evidence(ex, true);
  auto direct = predict(gen, f.vocab, ev);
  auto voted = self_consistency_predict(gen, f.vocab, ex, ev.documents, ev.statements);
  CHECK(voted == direct.label);
}

TEST_CASE("self-consistency tie path resolves by summed answer probability") {
  // Train a polarity-copying generator, then hand it two yes-polarity and two
  // no-polarity statements so the vote ties and the probability sums decide.
  Fixture f(1.0, 20, 5, 59);
  std::vector<EvidenceSet> train;
  for (const auto& ex : f.synth.dataset) {
    EvidenceSet ev;
    ev.question = ex;
    ev.documents = {Document{"g", ex.facts.at(0), 1.0}};
    train.push_back(std::move(ev));
  }
  Seq2SeqModel gen(small_config(f.vocab.size()), 61);
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 3e-3;
  tc.warmup_steps = 20;
  tc.seed = 3;
  finetune_generator(gen, f.vocab, train, EvidenceMode::retrieval_only, tc);

  const auto& ex = f.synth.dataset[7];
  auto words = [](const std::string& q) {
    auto sp1 = q.find(' ');
    auto sp2 = q.find(' ', sp1 + 1);
    std::string prop = q.substr(sp2 + 1);
    if (!prop.empty() && prop.back() == '?') prop.pop_back();
    return std::pair(q.substr(sp1 + 1, sp2 - sp1 - 1), prop);
  };
  auto [entity, prop] = words(ex.question);
  std::vector<KnowledgeStatement> statements;
  for (int i = 0; i < 2; ++i) {
    statements.push_back({entity + " are " + prop + ".", StatementSource::teacher, {}, {}});
    statements.push_back({entity + " are not " + prop + ".", StatementSource::teacher, {}, {}});
  }
  int yes_votes = 0, no_votes = 0;
  double sum_yes = 0, sum_no = 0;
  for (const auto& st : statements) {
    EvidenceSet ev;
    ev.question = ex;
    ev.statements = {st};
    auto p = predict(gen, f.vocab, ev);
    (p.label == Label::yes ? yes_votes : no_votes) += 1;
    sum_yes += std::exp(p.log_prob_yes);
    sum_no += std::exp(p.log_prob_no);
  }
  REQUIRE(yes_votes == 2);  // the polarity copier splits the vote 2-2
  auto got = self_consistency_predict(gen, f.vocab, ex, {}, statements);
  CHECK(got == resolve_votes(yes_votes, no_votes, sum_yes, sum_no));
}

TEST_CASE("answer_log_prob gradient matches finite differences") {
  Fixture f;
  ModelConfig cfg = small_config(f.vocab.size());
  cfg.d_model = 8;
  cfg.d_ff = 16;
  Seq2SeqModel gen(cfg, 63);
  auto ev = f.evidence(f.synth.dataset[0], true);
  auto loss = [&] { return ad::scale(answer_log_prob(gen, f.vocab, ev, Label::yes), -1); };
  auto result = iag::test::check_gradients(loss, gen.params(), 1e-5, 3);
  CHECK(result.max_rel_err < 1e-4);
}
