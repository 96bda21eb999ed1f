// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "iag/beam.hpp"
#include "iag/bm25.hpp"
#include "iag/completion.hpp"
#include "iag/distill.hpp"
#include "iag/optim.hpp"
#include "iag/synth.hpp"
#include "test_util.hpp"

using namespace iag;
namespace fs = std::filesystem;

TEST_CASE("equal raw confidences normalize to uniform (sigma = 0 rule)") {
  auto cs = normalize_confidences({0.2, 0.2, 0.2});
  CHECK(cs.std_dev == doctest::Approx(0.0));
  for (double v : cs.normalized) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("two-point normalization matches the hand-evaluated z-softmax") {
  auto cs = normalize_confidences({0.1, 0.3});
  CHECK(cs.mean == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(cs.std_dev == doctest::Approx(0.1).epsilon(1e-12));
  const double e1 = std::exp(-1.0), e2 = std::exp(1.0);
  CHECK(cs.normalized[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-12));
  CHECK(cs.normalized[1] == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-12));
  CHECK(cs.normalized[1] == doctest::Approx(0.8808).epsilon(1e-3));
}

TEST_CASE("z-score normalization is shift invariant") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> raw(4);
    for (auto& v : raw) v = unif(rng);
    auto base = normalize_confidences(raw);
    for (auto& v : raw) v += 7.25;
    auto shifted = normalize_confidences(raw);
    for (size_t i = 0; i < raw.size(); ++i) {
      CHECK(std::abs(base.normalized[i] - shifted.normalized[i]) < 1e-12);
    }
  }
}

TEST_CASE("normalized confidences always sum to one") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const size_t n = 1 + rng() % 7;
    std::vector<double> raw(n);
    for (auto& v : raw) v = unif(rng);
    if (rep % 10 == 0) std::fill(raw.begin(), raw.end(), 0.4);  // degenerate
    auto cs = normalize_confidences(raw);
    double total = 0;
    for (double v : cs.normalized) total += v;
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("non-finite confidence input is rejected") {
  CHECK_THROWS_AS(normalize_confidences({0.1, std::nan("")}), StageError);
  CHECK_THROWS_AS(normalize_confidences({}), StageError);
}

namespace {

struct Fixture {
  SynthOutput synth;
  Vocab vocab;
  std::map<std::string, std::vector<Document>> docs;

  explicit Fixture(SynthSpec spec, int m_docs = 5) {
    synth = synth_generate(spec);
    std::vector<std::string> texts;
    for (const auto& ex : synth.dataset) texts.push_back(ex.question);
    for (const auto& d : synth.corpus) texts.push_back(d.text);
    for (const auto& [qid, ks] : synth.teacher_table) texts.push_back(ks.text);
    texts.push_back("yes no");
    vocab = Vocab::build(texts, 1);
    auto index = Bm25Index::build(synth.corpus);
    for (const auto& ex : synth.dataset) docs[ex.qid] = index.retrieve(ex.question, m_docs);
  }
};

SynthSpec default_spec() {
  SynthSpec spec;
  spec.n_entities = 24;
  spec.n_hypernyms = 4;
  spec.n_properties = 4;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = 0.8;
  spec.teacher_noise_rate = 0.0;
  spec.seed = 53;
  return spec;
}

ModelConfig small_config(int vocab_size, int d_model = 16) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = d_model;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = d_model * 2;
  cfg.max_len = 32;
  return cfg;
}

KnowledgeStatement flip_polarity_stmt(const KnowledgeStatement& gold) {
  KnowledgeStatement flipped = gold;
  auto second = flipped.text.find(". ");
  auto neg = flipped.text.find(" are not ", second);
  if (neg != std::string::npos) {
    flipped.text = flipped.text.substr(0, neg) + " are " + flipped.text.substr(neg + 9);
  } else {
    auto pos = flipped.text.find(" are ", second);
    flipped.text = flipped.text.substr(0, pos) + " are not " + flipped.text.substr(pos + 5);
  }
  return flipped;
}

}  // namespace

TEST_CASE("uniform generator yields confidence 1/V^2 for every statement") {
  Fixture f(default_spec());
  Seq2SeqModel gen(small_config(f.vocab.size()), 7);
  for (const auto& [name, node] : gen.named_params()) {
    if (name == "w_out" || name == "b_out") node->value.fill(0);
  }
  const auto& ex = f.synth.dataset[0];
  const double expect = 1.0 / (static_cast<double>(f.vocab.size()) * f.vocab.size());
  for (int i = 0; i < 3; ++i) {
    const double p = confidence(gen, f.vocab, ex, f.synth.teacher_table.at(ex.qid), f.docs[ex.qid]);
    CHECK(p == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("confidence is a pure function of its inputs") {
  Fixture f(default_spec());
  Seq2SeqModel gen(small_config(f.vocab.size()), 9);
  const auto& ex = f.synth.dataset[3];
  const auto& st = f.synth.teacher_table.at(ex.qid);
  const double a = confidence(gen, f.vocab, ex, st, f.docs[ex.qid]);
  const double b = confidence(gen, f.vocab, ex, st, f.docs[ex.qid]);
  CHECK(a == b);
}

TEST_CASE("after warmup the gold statement outranks its polarity flip on >= 80% of questions") {
  SynthSpec spec;
  spec.n_entities = 60;
  spec.n_hypernyms = 10;
  spec.n_properties = 8;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = 0.8;
  spec.teacher_noise_rate = 0.0;
  spec.seed = 53;
  Fixture f(spec);
  Seq2SeqModel gen(small_config(f.vocab.size()), 63);
  std::vector<EvidenceSet> train;
  for (const auto& ex : f.synth.dataset) {
    EvidenceSet ev;
    ev.question = ex;
    ev.documents = f.docs[ex.qid];
    train.push_back(std::move(ev));
  }
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 3e-3;
  tc.warmup_steps = 20;
  tc.seed = 9;
  finetune_generator(gen, f.vocab, train, EvidenceMode::retrieval_only, tc);

  int wins = 0, total = 0;
  for (const auto& ex : f.synth.dataset) {
    if (total >= 120) break;
    const auto& gold = f.synth.teacher_table.at(ex.qid);
    const double pg = confidence(gen, f.vocab, ex, gold, f.docs[ex.qid]);
    const double pf = confidence(gen, f.vocab, ex, flip_polarity_stmt(gold), f.docs[ex.qid]);
    if (pg > pf) ++wins;
    ++total;
  }
  CHECK(total >= 100);
  CHECK(static_cast<double>(wins) / total >= 0.8);
}

TEST_CASE("N = 1 makes all three distillation strategies identical") {
  Fixture f(default_spec());
  Seq2SeqModel ind(small_config(f.vocab.size()), 11);
  const auto& ex = f.synth.dataset[2];
  std::vector<std::string> statements = {f.synth.teacher_table.at(ex.qid).text};
  auto conf = normalize_confidences({0.37});
  const double all = distill_loss(DistillStrategy::q_all, ind, f.vocab, ex, statements, nullptr)->scalar();
  const double mx = distill_loss(DistillStrategy::q_max, ind, f.vocab, ex, statements, &conf)->scalar();
  const double wt =
      distill_loss(DistillStrategy::q_weight, ind, f.vocab, ex, statements, &conf)->scalar();
  CHECK(std::abs(all - mx) < 1e-12);
  CHECK(std::abs(all - wt) < 1e-12);
}

TEST_CASE("uniform confidences make Q_Weight exactly Q_All / N") {
  Fixture f(default_spec());
  Seq2SeqModel ind(small_config(f.vocab.size()), 13);
  const auto& ex = f.synth.dataset[5];
  std::vector<std::string> statements;
  for (int i = 0; i < 4; ++i) {
    statements.push_back(f.synth.teacher_table.at(f.synth.dataset[static_cast<size_t>(i)].qid).text);
  }
  auto conf = normalize_confidences({0.5, 0.5, 0.5, 0.5});
  const double all = distill_loss(DistillStrategy::q_all, ind, f.vocab, ex, statements, nullptr)->scalar();
  const double wt =
      distill_loss(DistillStrategy::q_weight, ind, f.vocab, ex, statements, &conf)->scalar();
  CHECK(wt == doctest::Approx(all / 4).epsilon(1e-12));
}

TEST_CASE("hand-set confidences combine independently computed NLLs") {
  // arithmetic pinned by the combination law: 0.9*2.0 + 0.1*5.0 = 2.3, max-> 2.0
  CHECK(0.9 * 2.0 + 0.1 * 5.0 == doctest::Approx(2.3).epsilon(1e-15));

  Fixture f(default_spec());
  Seq2SeqModel ind(small_config(f.vocab.size()), 15);
  const auto& ex = f.synth.dataset[1];
  std::vector<std::string> statements = {
      f.synth.teacher_table.at(ex.qid).text,
      flip_polarity_stmt(f.synth.teacher_table.at(ex.qid)).text,
  };
  ConfidenceSet conf;
  conf.raw = {0.9, 0.1};
  conf.normalized = {0.9, 0.1};
  // independent per-statement NLLs through the public path
  ad::NoGradGuard ng;
  const double nll0 = ind.nll(f.vocab.encode(ex.question), statement_target(f.vocab, statements[0]))->scalar();
  const double nll1 = ind.nll(f.vocab.encode(ex.question), statement_target(f.vocab, statements[1]))->scalar();
  const double wt =
      distill_loss(DistillStrategy::q_weight, ind, f.vocab, ex, statements, &conf)->scalar();
  const double mx = distill_loss(DistillStrategy::q_max, ind, f.vocab, ex, statements, &conf)->scalar();
  CHECK(wt == doctest::Approx(0.9 * nll0 + 0.1 * nll1).epsilon(1e-12));
  CHECK(mx == doctest::Approx(nll0).epsilon(1e-12));
}

TEST_CASE("argmax ties resolve to the lowest index") {
  Fixture f(default_spec());
  Seq2SeqModel ind(small_config(f.vocab.size()), 17);
  const auto& ex = f.synth.dataset[4];
  std::vector<std::string> statements = {
      flip_polarity_stmt(f.synth.teacher_table.at(ex.qid)).text,
      f.synth.teacher_table.at(ex.qid).text,
  };
  ConfidenceSet conf;
  conf.raw = {0.5, 0.5};
  conf.normalized = {0.5, 0.5};
  ad::NoGradGuard ng;
  const double nll0 = ind.nll(f.vocab.encode(ex.question), statement_target(f.vocab, statements[0]))->scalar();
  const double mx = distill_loss(DistillStrategy::q_max, ind, f.vocab, ex, statements, &conf)->scalar();
  CHECK(mx == doctest::Approx(nll0).epsilon(1e-12));
}

TEST_CASE("Q_Weight gradient is the confidence-weighted sum of per-statement gradients") {
  Fixture f(default_spec());
  ModelConfig cfg = small_config(f.vocab.size(), 8);
  Seq2SeqModel ind(cfg, 19);
  const auto& ex = f.synth.dataset[0];
  std::vector<std::string> statements = {
      f.synth.teacher_table.at(ex.qid).text,
      flip_polarity_stmt(f.synth.teacher_table.at(ex.qid)).text,
  };
  ConfidenceSet conf;
  conf.normalized = {0.7, 0.3};

  auto params = ind.params();
  zero_grad(params);
  ad::backward(distill_loss(DistillStrategy::q_weight, ind, f.vocab, ex, statements, &conf));
  std::vector<Tensor> weighted;
  for (const auto& p : params) weighted.push_back(p->grad);

  std::vector<Tensor> combo;
  for (const auto& p : params) combo.push_back(Tensor(p->value.rows, p->value.cols));
  for (size_t s = 0; s < statements.size(); ++s) {
    zero_grad(params);
    ad::backward(ind.nll(f.vocab.encode(ex.question), statement_target(f.vocab, statements[s])));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      for (size_t i = 0; i < combo[pi].numel(); ++i) {
        combo[pi].data[i] += static_cast<real_t>(conf.normalized[s]) * params[pi]->grad.data[i];
      }
    }
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t i = 0; i < combo[pi].numel(); ++i) {
      CHECK(std::abs(combo[pi].data[i] - weighted[pi].data[i]) < 1e-9);
    }
  }
}

TEST_CASE("statement cache round-trips, counts hits and validates sizes") {
  StatementCache cache;
  cache.put("q1", {"a.", "b."});
  cache.put("q2", {"c."});
  cache.set_confidences("q1", {0.4, 0.6});
  CHECK_THROWS_AS(cache.set_confidences("q1", {0.4}), StageError);
  CHECK_THROWS_AS(cache.get("missing"), StageError);

  const auto path = (fs::temp_directory_path() / "iag_cache_test.jsonl").string();
  cache.save(path);
  auto loaded = StatementCache::load(path);
  CHECK(loaded.size() == 2);
  CHECK(loaded.hit_count() == 0);
  CHECK(loaded.get("q1").samples.size() == 2);
  CHECK(loaded.get("q1").confidences[1] == doctest::Approx(0.6));
  CHECK(loaded.hit_count() == 2);
  CHECK(loaded.has_confidences("q1"));
  CHECK_FALSE(loaded.has_confidences("q2"));
  fs::remove(path);
}

TEST_CASE("compute_confidences fills the cache once and reproducibly") {
  Fixture f(default_spec());
  Seq2SeqModel gen(small_config(f.vocab.size()), 21);
  std::vector<QAExample> subset(f.synth.dataset.begin(), f.synth.dataset.begin() + 6);
  MockTeacher teacher(f.synth.teacher_table, f.synth.dataset, 0.4, 99);
  StatementCache cache;
  auto tmpl = inductive_template();
  for (const auto& ex : subset) {
    auto statements = sample_statements(teacher, ex.question, tmpl, 3, 0.7);
    std::vector<std::string> texts;
    for (auto& s : statements) texts.push_back(s.text);
    cache.put(ex.qid, texts);
  }
  compute_confidences(gen, f.vocab, subset, f.docs, cache);
  std::vector<std::vector<double>> first;
  for (const auto& ex : subset) first.push_back(cache.get(ex.qid).confidences);

  StatementCache again;
  for (const auto& ex : subset) again.put(ex.qid, cache.get(ex.qid).samples);
  compute_confidences(gen, f.vocab, subset, f.docs, again);
  for (size_t i = 0; i < subset.size(); ++i) {
    CHECK(again.get(subset[i].qid).confidences == first[i]);
  }
}

TEST_CASE("distill_train with zero epochs leaves parameters untouched") {
  Fixture f(default_spec());
  Seq2SeqModel ind(small_config(f.vocab.size()), 23);
  std::vector<Tensor> before;
  for (const auto& [name, p] : ind.named_params()) before.push_back(p->value);
  StatementCache cache;
  std::vector<QAExample> subset(f.synth.dataset.begin(), f.synth.dataset.begin() + 4);
  for (const auto& ex : subset) cache.put(ex.qid, {f.synth.teacher_table.at(ex.qid).text});
  TrainConfig tc;
  tc.epochs = 0;
  auto stats = distill_train(ind, f.vocab, subset, {}, cache, DistillStrategy::q_all, tc);
  CHECK(stats.step_losses.empty());
  size_t i = 0;
  for (const auto& [name, p] : ind.named_params()) {
    CHECK(p->value.data == before[i].data);
    ++i;
  }
}

TEST_CASE("distill_train demands cached statements for every training qid") {
  Fixture f(default_spec());
  Seq2SeqModel ind(small_config(f.vocab.size()), 25);
  StatementCache cache;  // empty
  std::vector<QAExample> subset(f.synth.dataset.begin(), f.synth.dataset.begin() + 2);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_WITH_AS(distill_train(ind, f.vocab, subset, {}, cache, DistillStrategy::q_all, tc),
                       doctest::Contains("missing cached statements"), StageError);
}

TEST_CASE("distilled inductor reproduces the gold statement on held-out questions") {
  // noiseless teacher; majority of 5 seeds must reach >= 70% exact beam match
  SynthSpec spec;
  spec.n_entities = 36;
  spec.n_hypernyms = 6;
  spec.n_properties = 5;
  spec.distractor_docs = 1;
  spec.gold_doc_rate = 0.5;
  spec.teacher_noise_rate = 0.0;
  spec.seed = 71;
  Fixture f(spec);
  StatementCache cache;
  for (const auto& ex : f.synth.dataset) {
    cache.put(ex.qid, {f.synth.teacher_table.at(ex.qid).text});
  }
  std::vector<QAExample> train, held;
  for (size_t i = 0; i < f.synth.dataset.size(); ++i) {
    (i % 4 == 3 ? held : train).push_back(f.synth.dataset[i]);
  }
  int passes = 0;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    Seq2SeqModel ind(small_config(f.vocab.size()), 1000 + seed);
    TrainConfig tc;
    tc.epochs = 6;
    tc.lr = 3e-3;
    tc.warmup_steps = 30;
    tc.seed = seed;
    distill_train(ind, f.vocab, train, {}, cache, DistillStrategy::q_all, tc);
    long hits = 0;
    for (const auto& ex : held) {
      auto beams = beam_search(ind, f.vocab.encode(ex.question), 1, 24);
      if (!beams.empty() &&
          f.vocab.decode(beams[0].tokens) ==
              f.vocab.decode(statement_target(f.vocab, f.synth.teacher_table.at(ex.qid).text))) {
        ++hits;
      }
    }
    if (static_cast<double>(hits) / static_cast<double>(held.size()) >= 0.7) ++passes;
  }
  CHECK(passes >= 3);
}
