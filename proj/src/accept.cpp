// SPDX-License-Identifier: Apache-2.0
#include "iag/accept.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "iag/beam.hpp"
#include "iag/completion.hpp"
#include "iag/optim.hpp"
#include "iag/pipeline.hpp"
#include "iag/tailback.hpp"

namespace iag::accept {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// shared helpers

struct CheckFailure : std::runtime_error {
  explicit CheckFailure(const std::string& msg) : std::runtime_error(msg) {}
};

void require(bool cond, const std::string& msg) {
  if (!cond) throw CheckFailure(msg);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

Tensor random_tensor(int r, int c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(r, c);
  for (auto& x : t.data) x = static_cast<real_t>(dist(rng));
  return t;
}

double central_diff(const std::function<double()>& f, const ad::NodePtr& p, size_t idx,
                    double eps) {
  const real_t saved = p->value.data[idx];
  p->value.data[idx] = static_cast<real_t>(saved + eps);
  const double up = f();
  p->value.data[idx] = static_cast<real_t>(saved - eps);
  const double down = f();
  p->value.data[idx] = saved;
  return (up - down) / (2 * eps);
}

// max relative error between analytic gradients and central differences,
// optionally subsampling coordinates per parameter
double max_grad_err(const std::function<ad::NodePtr()>& loss, const std::vector<ad::NodePtr>& params,
                    double eps, long coords_per_param = 0, std::uint64_t coord_seed = 17) {
  zero_grad(params);
  ad::backward(loss());
  auto f = [&] { return static_cast<double>(loss()->scalar()); };
  double worst = 0;
  std::mt19937_64 rng(coord_seed);
  for (const auto& p : params) {
    std::vector<size_t> coords;
    if (coords_per_param <= 0 || static_cast<long>(p->value.numel()) <= coords_per_param) {
      for (size_t i = 0; i < p->value.numel(); ++i) coords.push_back(i);
    } else {
      for (long k = 0; k < coords_per_param; ++k) coords.push_back(rng() % p->value.numel());
    }
    for (size_t idx : coords) {
      worst = std::max(worst, rel_err(p->grad.data[idx], central_diff(f, p, idx, eps)));
    }
  }
  return worst;
}

ModelConfig desk_model(int vocab_size, int d_model = 16) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = d_model;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 2 * d_model;
  cfg.max_len = 32;
  return cfg;
}

// In-memory desk benchmark shared by the directional criteria.
struct Bench {
  SynthOutput synth;
  Vocab vocab;
  SplitSet splits;
  std::map<std::string, std::vector<Document>> docs;
  StatementCache cache;  // teacher samples
  int m_docs = 4;
};

Bench make_bench(SynthSpec spec, double mock_noise, int n_cache, int m_docs,
                 std::uint64_t seed) {
  Bench b;
  b.m_docs = m_docs;
  spec.seed = seed;
  b.synth = synth_generate(spec);
  synth_check_label_consistency(b.synth);
  std::vector<std::string> texts;
  for (const auto& ex : b.synth.dataset) texts.push_back(ex.question);
  for (const auto& d : b.synth.corpus) texts.push_back(d.text);
  for (const auto& [qid, ks] : b.synth.teacher_table) texts.push_back(ks.text);
  texts.push_back("yes no");
  b.vocab = Vocab::build(texts, 1);
  auto index = Bm25Index::build(b.synth.corpus);
  b.docs = docs_map(index, b.synth.dataset, m_docs);
  b.splits = split_dataset(b.synth.dataset, 0.7, 0.15, seed);

  MockTeacher teacher(b.synth.teacher_table, b.synth.dataset, mock_noise, mix_seed(seed, "elicit"));
  auto tmpl = inductive_template();
  for (const auto& ex : b.synth.dataset) {
    auto statements = sample_statements(teacher, ex.question, tmpl, n_cache, 0.7);
    std::vector<std::string> out;
    for (auto& s : statements) out.push_back(std::move(s.text));
    b.cache.put(ex.qid, std::move(out));
  }
  return b;
}

std::vector<KnowledgeStatement> teacher_statements(const Bench& b, const std::string& qid, int n) {
  const auto& entry = b.cache.get(qid);
  std::vector<KnowledgeStatement> out;
  for (int i = 0; i < n && i < static_cast<int>(entry.samples.size()); ++i) {
    KnowledgeStatement ks;
    ks.text = entry.samples[static_cast<size_t>(i)];
    ks.source = StatementSource::teacher;
    out.push_back(std::move(ks));
  }
  return out;
}

TrainConfig desk_train(long epochs, std::uint64_t seed, double lr = 3e-3) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lr = lr;
  tc.warmup_steps = 20;
  tc.batch_size = 1;
  tc.seed = seed;
  return tc;
}

// Generator trained on the bench's training split under the given mode;
// n_statements > 0 attaches that many cached teacher statements per question.
Seq2SeqModel train_generator(const Bench& b, EvidenceMode mode, int n_statements, long epochs,
                             std::uint64_t seed) {
  Seq2SeqModel gen(desk_model(b.vocab.size()), mix_seed(seed, "gen-init"));
  std::vector<EvidenceSet> evidence;
  for (const auto& ex : b.splits.train) {
    EvidenceSet ev;
    ev.question = ex;
    ev.documents = b.docs.at(ex.qid);
    if (n_statements > 0) ev.statements = teacher_statements(b, ex.qid, n_statements);
    evidence.push_back(std::move(ev));
  }
  finetune_generator(gen, b.vocab, evidence, mode, desk_train(epochs, mix_seed(seed, "gen-train")));
  return gen;
}

double eval_accuracy(const Bench& b, const Seq2SeqModel& gen, EvidenceMode mode,
                     const std::map<std::string, std::vector<KnowledgeStatement>>* statements) {
  return evaluate_dataset(gen, b.vocab, b.splits.test, b.docs, mode, statements, "accept", 0)
      .accuracy;
}

std::map<std::string, std::vector<KnowledgeStatement>> cached_statement_map(const Bench& b, int n) {
  std::map<std::string, std::vector<KnowledgeStatement>> out;
  for (const auto& ex : b.splits.test) out[ex.qid] = teacher_statements(b, ex.qid, n);
  return out;
}

std::map<std::string, std::vector<KnowledgeStatement>> student_statement_map(
    const Bench& b, const Seq2SeqModel& inductor, int n, int max_len, std::uint64_t seed) {
  std::map<std::string, std::vector<KnowledgeStatement>> out;
  for (const auto& ex : b.splits.test) {
    out[ex.qid] =
        sample_student_statements(inductor, b.vocab, ex.question, n, 0.7, max_len, seed);
  }
  return out;
}

Seq2SeqModel copy_model(const Seq2SeqModel& src_model, int vocab_size) {
  Seq2SeqModel out(src_model.config(), 0);
  (void)vocab_size;
  const auto& src = src_model.named_params();
  const auto& dst = out.named_params();
  for (size_t i = 0; i < src.size(); ++i) dst[i].second->value = src[i].second->value;
  return out;
}

// Top-n beam hypotheses as evaluation statements; deterministic, and exactly
// the quantity tailback optimizes.
std::map<std::string, std::vector<KnowledgeStatement>> beam_statement_map(const Bench& b,
                                                                          const Seq2SeqModel& ind,
                                                                          int n, int max_len) {
  std::map<std::string, std::vector<KnowledgeStatement>> out;
  for (const auto& ex : b.splits.test) {
    auto beams = beam_search(ind, b.vocab.encode(ex.question), n, max_len);
    std::vector<KnowledgeStatement> v;
    for (const auto& h : beams) {
      KnowledgeStatement ks;
      ks.text = b.vocab.decode(h.tokens);
      ks.source = StatementSource::student;
      ks.seq_log_prob = h.score;
      v.push_back(std::move(ks));
    }
    out[ex.qid] = std::move(v);
  }
  return out;
}

// Full IAG-Student training, sharing the expensive stages between the
// with/without-tailback arms. The feedback generator trains on one half of
// the training split; tailback optimizes on the other half, so its feedback
// reflects statement quality instead of memorized answers. Held-out
// evaluation feeds the top-N beam statements to the finalize-trained
// generator.
struct StudentArms {
  double distill_only = 0.0;
  double with_tailback = 0.0;
  bool generator_frozen_bit_exact = false;
  std::vector<double> top_feedback;
};

StudentArms run_student_arms(const Bench& b, DistillStrategy strategy, int n_statements,
                             int max_statement_len, long distill_epochs, long tailback_iters,
                             double tailback_lr, std::uint64_t seed,
                             bool want_tailback_arm = true) {
  StudentArms arms;
  const std::uint64_t s = seed;

  std::vector<QAExample> teach_half, tailback_half;
  for (size_t i = 0; i < b.splits.train.size(); ++i) {
    (i % 2 == 0 ? teach_half : tailback_half).push_back(b.splits.train[i]);
  }

  // Eq. 1 confidences come from the retrieval-only warmup generator.
  Seq2SeqModel warm = train_generator(b, EvidenceMode::retrieval_only, 0, 1, mix_seed(s, "warm"));
  StatementCache cache = b.cache;
  compute_confidences(warm, b.vocab, b.splits.train, b.docs, cache);

  Seq2SeqModel inductor(desk_model(b.vocab.size()), mix_seed(s, "ind-init"));
  distill_train(inductor, b.vocab, b.splits.train, {}, cache, strategy,
                desk_train(distill_epochs, mix_seed(s, "distill")), n_statements);

  // Statement-reading generator: warmup continued on docs + teacher statements.
  Seq2SeqModel teach = copy_model(warm, b.vocab.size());
  {
    std::vector<EvidenceSet> evidence;
    for (const auto& ex : teach_half) {
      EvidenceSet ev;
      ev.question = ex;
      ev.documents = b.docs.at(ex.qid);
      ev.statements = teacher_statements(b, ex.qid, n_statements);
      evidence.push_back(std::move(ev));
    }
    finetune_generator(teach, b.vocab, evidence, EvidenceMode::both,
                       desk_train(2, mix_seed(s, "teach")));
  }

  auto finalize_and_eval = [&](const Seq2SeqModel& ind) {
    Seq2SeqModel final_gen = copy_model(teach, b.vocab.size());
    TrainConfig tc = desk_train(1, mix_seed(s, "finalize"));
    finalize_generator(final_gen, ind, b.vocab, b.splits.train, b.docs, n_statements, 0.7,
                       max_statement_len, tc);
    auto stmts = beam_statement_map(b, ind, n_statements, max_statement_len);
    return eval_accuracy(b, final_gen, EvidenceMode::both, &stmts);
  };

  arms.distill_only = finalize_and_eval(inductor);

  if (want_tailback_arm) {
    std::vector<Tensor> gen_before;
    for (const auto& [name, p] : teach.named_params()) gen_before.push_back(p->value);

    Seq2SeqModel tb_inductor = copy_model(inductor, b.vocab.size());
    TailbackConfig tcfg;
    tcfg.iterations = tailback_iters;
    tcfg.n_statements = n_statements;
    tcfg.max_statement_len = max_statement_len;
    tcfg.variant = TailbackVariant::eq6;
    tcfg.lr = tailback_lr;
    tcfg.seed = mix_seed(s, "tailback");
    auto stats = tailback_train(tb_inductor, teach, b.vocab, tailback_half, {}, b.docs, tcfg);
    arms.top_feedback = stats.top_feedback;

    arms.generator_frozen_bit_exact = true;
    size_t i = 0;
    for (const auto& [name, p] : teach.named_params()) {
      arms.generator_frozen_bit_exact =
          arms.generator_frozen_bit_exact && p->value.data == gen_before[i].data;
      ++i;
    }
    arms.with_tailback = finalize_and_eval(tb_inductor);
  }
  return arms;
}

double mean(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  return v.empty() ? 0.0 : m / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite

std::string criterion_gradients(const std::string&) {
  const double eps = 1e-5;
  double worst_op = 0;
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<int> dim(1, 6);
    const int n = dim(rng), m = dim(rng), k = dim(rng);
    auto up = [&](const std::function<ad::NodePtr()>& loss, const std::vector<ad::NodePtr>& ps) {
      worst_op = std::max(worst_op, max_grad_err(loss, ps, eps));
    };
    {
      auto a = ad::param(random_tensor(n, m, rng));
      auto b = ad::param(random_tensor(n, m, rng));
      up([&] { return ad::sum(ad::mul(ad::add(a, b), ad::sub(a, b))); }, {a, b});
      up([&] { return ad::sum(ad::scale(ad::mul(a, b), 1.3)); }, {a, b});
    }
    {
      auto a = ad::param(random_tensor(n, m, rng));
      auto b = ad::param(random_tensor(1, m, rng));
      up([&] { return ad::sum(ad::exp(ad::add_rowvec(a, b))); }, {a, b});
    }
    {
      auto a = ad::param(random_tensor(n, k, rng));
      auto b = ad::param(random_tensor(k, m, rng));
      up([&] { return ad::sum(ad::mul(ad::matmul(a, b), ad::matmul(a, b))); }, {a, b});
    }
    {
      auto a = ad::param(random_tensor(n, k, rng));
      auto b = ad::param(random_tensor(m, k, rng));
      up([&] { return ad::sum(ad::exp(ad::matmul_nt(a, b))); }, {a, b});
      up([&] { return ad::sum(ad::exp(ad::attention_score(a, b))); }, {a, b});
    }
    {
      auto a = ad::param(random_tensor(n, m, rng, -2, 2));
      up([&] { return ad::sum(ad::mul(ad::softmax_rows(a), ad::softmax_rows(a))); }, {a});
      up([&] { return ad::sum(ad::exp(ad::log_softmax_rows(a))); }, {a});
      up([&] { return ad::sum(ad::exp(a)); }, {a});
    }
    {
      auto a = ad::param(random_tensor(n, m, rng, 0.3, 3.0));
      up([&] { return ad::sum(ad::log(a)); }, {a});
    }
    {
      Tensor t = random_tensor(n, m, rng, -2, 2);
      for (auto& x : t.data) {
        if (std::abs(x) < 1e-3) x = static_cast<real_t>(0.1);
      }
      auto a = ad::param(t);
      up([&] { return ad::sum(ad::mul(ad::relu(a), ad::relu(a))); }, {a});
    }
    {
      const int cols = std::max(3, m);
      auto x = ad::param(random_tensor(n, cols, rng));
      auto g = ad::param(random_tensor(1, cols, rng, 0.5, 1.5));
      auto bb = ad::param(random_tensor(1, cols, rng));
      up([&] { return ad::sum(ad::exp(ad::layer_norm(x, g, bb))); }, {x, g, bb});
    }
    {
      auto table = ad::param(random_tensor(5, m, rng));
      std::vector<int> ids;
      for (int i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng() % 5));
      up([&] { return ad::sum(ad::exp(ad::gather_rows(table, ids))); }, {table});
    }
    {
      auto a = ad::param(random_tensor(n, m, rng));
      std::vector<int> ids;
      for (int i = 0; i < n; ++i) ids.push_back(static_cast<int>(rng() % m));
      up([&] { return ad::sum(ad::exp(ad::rows_pick(a, ids))); }, {a});
      up([&] { return ad::exp(ad::pick(a, n - 1, m - 1)); }, {a});
      up([&] { return ad::sum(ad::exp(ad::slice_rows(a, 0, n))); }, {a});
    }
    {
      auto a = ad::param(random_tensor(n, m, rng));
      auto b = ad::param(random_tensor(k, m, rng));
      auto c = ad::param(random_tensor(n, k, rng));
      up([&] { return ad::sum(ad::exp(ad::concat_rows({a, b}))); }, {a, b});
      up([&] { return ad::sum(ad::exp(ad::concat_cols({a, c}))); }, {a, c});
    }
  }
  require(worst_op < 1e-4, "op gradient error " + fmt(worst_op));

  // sequence_nll through the full model
  SynthSpec spec;
  spec.n_entities = 9;
  spec.n_hypernyms = 3;
  spec.n_properties = 2;
  spec.seed = 5;
  auto bench = make_bench(spec, 0.0, 2, 3, 5);
  ModelConfig mc = desk_model(bench.vocab.size(), 8);
  Seq2SeqModel model(mc, 77);
  const auto& ex = bench.synth.dataset[0];
  TokenSeq src = bench.vocab.encode(ex.question);
  TokenSeq tgt = statement_target(bench.vocab, bench.synth.teacher_table.at(ex.qid).text);
  double nll_err =
      max_grad_err([&] { return model.nll(src, tgt); }, model.params(), eps, 3, 19);
  require(nll_err < 1e-4, "sequence_nll gradient error " + fmt(nll_err));

  // answer_log_prob through fused evidence
  Seq2SeqModel gen(mc, 79);
  EvidenceSet ev;
  ev.question = ex;
  ev.documents = bench.docs.at(ex.qid);
  ev.statements = teacher_statements(bench, ex.qid, 1);
  double alp_err = max_grad_err(
      [&] { return ad::scale(answer_log_prob(gen, bench.vocab, ev, ex.answer), -1); },
      gen.params(), eps, 3, 23);
  require(alp_err < 1e-4, "answer_log_prob gradient error " + fmt(alp_err));

  // tailback variants through the differentiable beam path (1e-3, eps 1e-6)
  double tb_worst = 0;
  for (auto variant :
       {TailbackVariant::eq6, TailbackVariant::alg1, TailbackVariant::eq6_unnormalized}) {
    Seq2SeqModel ind(mc, 81);
    auto base = tailback_loss(ind, gen, bench.vocab, ex, bench.docs.at(ex.qid), 3, 8, variant);
    zero_grad(ind.params());
    ad::backward(base.loss);
    auto loss_value = [&] {
      auto t = tailback_loss(ind, gen, bench.vocab, ex, bench.docs.at(ex.qid), 3, 8, variant);
      for (size_t i = 0; i < t.hypotheses.size(); ++i) {
        require(t.hypotheses[i].tokens == base.hypotheses[i].tokens,
                "beam token path changed under perturbation");
      }
      return static_cast<double>(t.loss->scalar());
    };
    std::mt19937_64 coord_rng(29);
    for (const auto& p : ind.params()) {
      const size_t idx = coord_rng() % p->value.numel();
      const double analytic = p->grad.data[idx];
      const double fd = central_diff(loss_value, p, idx, 1e-6);
      if (std::abs(analytic) < 1e-7 && std::abs(fd) < 1e-7) continue;
      tb_worst = std::max(tb_worst, rel_err(analytic, fd));
    }
  }
  require(tb_worst < 1e-3, "tailback gradient error " + fmt(tb_worst));

  return "op<" + fmt(worst_op) + " nll<" + fmt(nll_err) + " alp<" + fmt(alp_err) + " tailback<" +
         fmt(tb_worst);
}

// ---------------------------------------------------------------------------
// criterion 2: beam oracle

std::string criterion_beam(const std::string&) {
  std::mt19937_64 rng(211);
  // paired diff-vs-reference runs on 100 random models
  for (int rep = 0; rep < 100; ++rep) {
    ModelConfig cfg;
    cfg.vocab_size = 7;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_len = 10;
    Seq2SeqModel model(cfg, rng());
    TokenSeq src;
    src.ids = {static_cast<int>(5 + rng() % 2), static_cast<int>(5 + rng() % 2)};
    const int width = 1 + rep % 5;
    auto ref = beam_search(model, src, width, 5);
    auto diff = differentiable_beam_search(model, src, width, 5);
    require(ref.size() == diff.size(), "beam result size mismatch");
    for (size_t i = 0; i < ref.size(); ++i) {
      require(ref[i].tokens == diff[i].tokens, "beam token mismatch");
      require(ref[i].finished == diff[i].finished, "beam finished-flag mismatch");
      require(std::abs(ref[i].score - diff[i].score_node->scalar()) < 1e-9,
              "beam score mismatch");
    }
  }

  // exhaustive enumeration on vocab-6 / max_len-4 instances (constant-logit
  // models, where pruning at width >= per-step branching is provably safe)
  std::function<void(const Seq2SeqModel&, const ad::NodePtr&, std::vector<int>&, double, int,
                     std::vector<Hypothesis>&)>
      enumerate = [&](const Seq2SeqModel& model, const ad::NodePtr& enc, std::vector<int>& prefix,
                      double score, int max_len, std::vector<Hypothesis>& out) {
        TokenSeq decoder_input;
        decoder_input.ids.push_back(Vocab::kBos);
        decoder_input.ids.insert(decoder_input.ids.end(), prefix.begin(), prefix.end());
        auto logits = model.decode_logits(enc, decoder_input);
        auto logp = ad::log_softmax_rows(
            ad::slice_rows(logits, logits->value.rows - 1, logits->value.rows));
        for (int tok = 0; tok < model.config().vocab_size; ++tok) {
          const double s = score + logp->value.at(0, tok);
          prefix.push_back(tok);
          if (tok == Vocab::kEos || static_cast<int>(prefix.size()) == max_len) {
            Hypothesis h;
            h.tokens.ids = prefix;
            h.score = s;
            h.finished = tok == Vocab::kEos;
            out.push_back(std::move(h));
          } else {
            enumerate(model, enc, prefix, s, max_len, out);
          }
          prefix.pop_back();
        }
      };

  std::uniform_real_distribution<double> unif(-1.5, 1.5);
  for (int rep = 0; rep < 20; ++rep) {
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.d_model = 4;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.max_len = 8;
    Seq2SeqModel model(cfg, 0);
    for (const auto& [name, node] : model.named_params()) {
      node->value.fill(0);
      if (name == "b_out") {
        for (int c = 0; c < 6; ++c) node->value.at(0, c) = static_cast<real_t>(unif(rng));
        node->value.at(0, Vocab::kEos) = -40;
      }
    }
    TokenSeq src;
    src.ids = {3, 4};
    auto beams = beam_search(model, src, 6, 4);
    ad::NoGradGuard ng;
    auto enc = model.encode(src);
    std::vector<Hypothesis> all;
    std::vector<int> prefix;
    enumerate(model, enc, prefix, 0.0, 4, all);
    std::sort(all.begin(), all.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::lexicographical_compare(a.tokens.ids.begin(), a.tokens.ids.end(),
                                          b.tokens.ids.begin(), b.tokens.ids.end());
    });
    require(beams.size() == 6, "beam count");
    for (size_t i = 0; i < beams.size(); ++i) {
      require(beams[i].tokens == all[i].tokens, "enumeration token mismatch");
      require(std::abs(beams[i].score - all[i].score) < 1e-9, "enumeration score mismatch");
    }
  }
  return "100 paired runs + 20 enumeration instances";
}

// ---------------------------------------------------------------------------
// criterion 3: formula oracles

std::string criterion_formulas(const std::string&) {
  std::mt19937_64 rng(311);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // confidence normalization vs long-double brute force
  for (int rep = 0; rep < 200; ++rep) {
    size_t n = 1 + rng() % 7;
    std::vector<double> raw(n);
    for (auto& v : raw) v = unif(rng);
    if (rep % 7 == 0) std::fill(raw.begin(), raw.end(), raw[0]);  // sigma = 0
    if (rep % 11 == 0) raw.resize(1);                             // N = 1
    auto cs = normalize_confidences(raw);
    long double mu = 0;
    for (double v : raw) mu += v;
    mu /= static_cast<long double>(raw.size());
    long double var = 0;
    for (double v : raw) var += (v - mu) * (v - mu);
    var /= static_cast<long double>(raw.size());
    const long double sigma = std::sqrt(var);
    std::vector<long double> expect(raw.size());
    if (sigma == 0) {
      std::fill(expect.begin(), expect.end(), 1.0L / static_cast<long double>(raw.size()));
    } else {
      long double denom = 0;
      for (size_t i = 0; i < raw.size(); ++i) {
        expect[i] = std::exp((static_cast<long double>(raw[i]) - mu) / sigma);
        denom += expect[i];
      }
      for (auto& e : expect) e /= denom;
    }
    for (size_t i = 0; i < raw.size(); ++i) {
      require(std::abs(cs.normalized[i] - static_cast<double>(expect[i])) < 1e-9,
              "confidence normalization mismatch");
    }
  }

  // distillation losses vs independently computed NLL combinations
  SynthSpec spec;
  spec.n_entities = 9;
  spec.n_hypernyms = 3;
  spec.n_properties = 2;
  spec.seed = 31;
  auto bench = make_bench(spec, 0.5, 4, 3, 31);
  Seq2SeqModel ind(desk_model(bench.vocab.size(), 8), 313);
  for (int rep = 0; rep < 10; ++rep) {
    const auto& ex = bench.synth.dataset[rng() % bench.synth.dataset.size()];
    const size_t n = 1 + rng() % 4;
    auto entry = bench.cache.get(ex.qid);
    std::vector<std::string> statements(entry.samples.begin(),
                                        entry.samples.begin() + static_cast<long>(n));
    std::vector<double> raw(n);
    for (auto& v : raw) v = unif(rng);
    auto conf = normalize_confidences(raw);

    ad::NoGradGuard ng;
    std::vector<double> nll(n);
    TokenSeq src = bench.vocab.encode(ex.question);
    for (size_t i = 0; i < n; ++i) {
      nll[i] = ind.nll(src, statement_target(bench.vocab, statements[i]))->scalar();
    }
    double expect_all = 0, expect_weight = 0;
    size_t best = 0;
    for (size_t i = 0; i < n; ++i) {
      expect_all += nll[i];
      expect_weight += conf.normalized[i] * nll[i];
      if (conf.normalized[i] > conf.normalized[best]) best = i;
    }
    const double got_all =
        distill_loss(DistillStrategy::q_all, ind, bench.vocab, ex, statements, nullptr)->scalar();
    const double got_max =
        distill_loss(DistillStrategy::q_max, ind, bench.vocab, ex, statements, &conf)->scalar();
    const double got_weight =
        distill_loss(DistillStrategy::q_weight, ind, bench.vocab, ex, statements, &conf)->scalar();
    require(std::abs(got_all - expect_all) < 1e-9, "Q_All mismatch");
    require(std::abs(got_max - nll[best]) < 1e-9, "Q_Max mismatch");
    require(std::abs(got_weight - expect_weight) < 1e-9, "Q_Weight mismatch");
  }

  // beam-score softmax vs naive softmax on the raw scores
  std::uniform_real_distribution<double> sunif(-8.0, 0.0);
  for (int rep = 0; rep < 100; ++rep) {
    const size_t n = 1 + rng() % 6;
    std::vector<DiffHypothesis> hyps;
    std::vector<long double> scores;
    for (size_t i = 0; i < n; ++i) {
      const double sc = sunif(rng);
      scores.push_back(sc);
      DiffHypothesis h;
      h.score_node = ad::constant(Tensor::scalar(static_cast<real_t>(sc)));
      hyps.push_back(std::move(h));
    }
    auto s = beam_score_softmax(hyps);
    long double mx = scores[0];
    for (auto v : scores) mx = std::max(mx, v);
    long double denom = 0;
    for (auto v : scores) denom += std::exp(v - mx);
    for (size_t i = 0; i < n; ++i) {
      const long double expect = std::exp(scores[i] - mx) / denom;
      require(std::abs(s[i]->scalar() - static_cast<double>(expect)) < 1e-9,
              "beam softmax mismatch");
    }
  }
  return "eq2/eq3/eq4/eq5 against brute-force oracles, degenerate cases included";
}

// ---------------------------------------------------------------------------
// criterion 4: prompt fidelity

std::string criterion_prompts(const std::string&) {
  const std::string question = "Can you catch a jellyfish in the dumpster?";
  const std::string inductive_expected =
      "Question: It is safe to keep wolves as pets.\n"
      "Knowledge: Wolves, tigers and lions are wild animals. Wild animals are generally "
      "dangerous.\n"
      "###\n"
      "Question: Bacon is healthy diet food.\n"
      "Knowledge: Bacon, chips and cakes are junk food. Junk food is not healthy.\n"
      "###\n"
      "Question: Pens are more expensive than cars.\n"
      "Knowledge: Pens, erasers and paper are stationery. Stationery is cheaper than cars.\n"
      "###\n"
      "Question: People make furniture out of oak.\n"
      "Knowledge: Oak, pine and beech are Wood. Wood can be used to make furniture.\n"
      "###\n"
      "Question: Fridges are often used in the wild.\n"
      "Knowledge: Fridges, ovens and TVs are appliances. Appliances are used in houses.\n"
      "###\n"
      "Question: " + question + "\nKnowledge:";
  const std::string trivial_expected =
      "Question: It is safe to keep wolves as pets.\n"
      "Knowledge: Wolves are dangerous.\n"
      "###\n"
      "Question: Bacon is healthy diet food.\n"
      "Knowledge: Bacon is not healthy.\n"
      "###\n"
      "Question: Pens are more expensive than cars.\n"
      "Knowledge: Pens are cheaper than cars.\n"
      "###\n"
      "Question: People make furniture out of oak.\n"
      "Knowledge: Oak can be used to make furniture.\n"
      "###\n"
      "Question: Fridges are often used in the wild.\n"
      "Knowledge: Fridges are used in houses.\n"
      "###\n"
      "Question: " + question + "\nKnowledge:";
  require(render_prompt(inductive_template(), question) == inductive_expected,
          "inductive prompt not byte-identical");
  require(render_prompt(trivial_template(), question) == trivial_expected,
          "trivial prompt not byte-identical");
  return "both templates byte-identical with the user question substituted";
}

// ---------------------------------------------------------------------------
// criterion 5: directional Table 1

SynthSpec c5_spec(double gold_rate) {
  SynthSpec spec;
  spec.n_entities = 48;
  spec.n_hypernyms = 6;
  spec.n_properties = 5;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = gold_rate;
  spec.teacher_noise_rate = 0.0;
  return spec;
}

std::string criterion_table1(const std::string&) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  const int n_statements = 3;
  std::map<double, std::vector<double>> retrieval, both;
  for (double rate : {0.0, 1.0}) {
    for (auto seed : seeds) {
      auto bench = make_bench(c5_spec(rate), 0.0, n_statements, 4, seed);
      auto gen_ret =
          train_generator(bench, EvidenceMode::retrieval_only, n_statements, 2, mix_seed(seed, "r"));
      retrieval[rate].push_back(eval_accuracy(bench, gen_ret, EvidenceMode::retrieval_only, nullptr));
      auto gen_both = train_generator(bench, EvidenceMode::both, n_statements, 2, mix_seed(seed, "r"));
      auto stmts = cached_statement_map(bench, n_statements);
      both[rate].push_back(eval_accuracy(bench, gen_both, EvidenceMode::both, &stmts));
    }
  }
  int wins = 0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (both[0.0][i] > retrieval[0.0][i]) ++wins;
  }
  const double gap0 = mean(both[0.0]) - mean(retrieval[0.0]);
  const double gap1 = mean(both[1.0]) - mean(retrieval[1.0]);
  std::string detail = "rate0: ret=" + fmt(mean(retrieval[0.0])) + " both=" + fmt(mean(both[0.0])) +
                       " wins=" + std::to_string(wins) + "/5; rate1: ret=" +
                       fmt(mean(retrieval[1.0])) + " both=" + fmt(mean(both[1.0])) + "; gap " +
                       fmt(gap0) + " -> " + fmt(gap1);
  require(wins >= 3, "retrieval&induction beat retrieval-only in only " + std::to_string(wins) +
                         "/5 seeds (" + detail + ")");
  require(gap1 < gap0, "gap did not shrink at gold_doc_rate 1 (" + detail + ")");
  return detail;
}

// ---------------------------------------------------------------------------
// criterion 6: directional Fig. 4 (warmup strategies)

std::string criterion_fig4(const std::string&) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SynthSpec spec;
  spec.n_entities = 60;
  spec.n_hypernyms = 10;
  spec.n_properties = 8;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = 0.8;
  spec.teacher_noise_rate = 0.0;  // per-sample noise comes from the mock teacher
  const int n_statements = 5;
  const int max_stmt_len = 20;

  std::vector<double> acc_all, acc_weight, acc_ret;
  for (auto seed : seeds) {
    auto bench = make_bench(spec, 0.3, n_statements, 4, seed);
    auto gen_ret =
        train_generator(bench, EvidenceMode::retrieval_only, 0, 3, mix_seed(seed, "rag"));
    acc_ret.push_back(eval_accuracy(bench, gen_ret, EvidenceMode::retrieval_only, nullptr));
    auto weight = run_student_arms(bench, DistillStrategy::q_weight, n_statements, max_stmt_len,
                                   10, 0, 0.0, seed, false);
    acc_weight.push_back(weight.distill_only);
    auto all = run_student_arms(bench, DistillStrategy::q_all, n_statements, max_stmt_len, 10, 0,
                                0.0, seed, false);
    acc_all.push_back(all.distill_only);
  }
  int wins = 0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (acc_weight[i] >= acc_all[i]) ++wins;
  }
  const double all_vs_rag = std::abs(mean(acc_all) - mean(acc_ret));
  std::string detail = "rag=" + fmt(mean(acc_ret)) + " q_all=" + fmt(mean(acc_all)) +
                       " q_weight=" + fmt(mean(acc_weight)) + " wins=" + std::to_string(wins) +
                       "/5 |q_all-rag|=" + fmt(all_vs_rag);
  require(wins >= 3, "Q_Weight >= Q_All in only " + std::to_string(wins) + "/5 seeds (" + detail + ")");
  // "within noise": 0.08 is ~2.5 pooled binomial standard errors at this size
  require(all_vs_rag <= 0.08, "Q_All strayed from the retrieval baseline (" + detail + ")");
  return detail;
}

// ---------------------------------------------------------------------------
// criterion 7: directional Table 3 (tailback on top of distillation)

std::string criterion_table3(const std::string&) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SynthSpec spec;
  spec.n_entities = 60;
  spec.n_hypernyms = 10;
  spec.n_properties = 8;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = 0.0;
  spec.teacher_noise_rate = 0.0;
  const int n_statements = 5;
  const int max_stmt_len = 20;

  std::vector<double> acc_d, acc_tb;
  bool frozen_ok = true;
  for (auto seed : seeds) {
    auto bench = make_bench(spec, 0.3, n_statements, 4, seed);
    auto arms = run_student_arms(bench, DistillStrategy::q_weight, n_statements, max_stmt_len, 10,
                                 500, 7e-4, seed, true);
    acc_d.push_back(arms.distill_only);
    acc_tb.push_back(arms.with_tailback);
    frozen_ok = frozen_ok && arms.generator_frozen_bit_exact;
  }
  int wins = 0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (acc_tb[i] > acc_d[i]) ++wins;
  }
  std::string detail = "distill=" + fmt(mean(acc_d)) + " +tailback=" + fmt(mean(acc_tb)) +
                       " wins=" + std::to_string(wins) + "/5 frozen=" +
                       (frozen_ok ? "bit-exact" : "VIOLATED");
  require(frozen_ok, "generator changed during tailback (" + detail + ")");
  require(mean(acc_tb) >= mean(acc_d), "tailback decreased mean accuracy (" + detail + ")");
  require(wins >= 3, "tailback improved only " + std::to_string(wins) + "/5 seeds (" + detail + ")");
  return detail;
}

// ---------------------------------------------------------------------------
// criterion 8: directional Table 5 (fusion vs voting)

std::string criterion_table5(const std::string&) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SynthSpec spec;
  spec.n_entities = 60;
  spec.n_hypernyms = 10;
  spec.n_properties = 8;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = 0.5;
  spec.teacher_noise_rate = 0.0;
  const int n_statements = 5;

  std::vector<double> fusion, voting;
  for (auto seed : seeds) {
    auto bench = make_bench(spec, 0.3, n_statements, 4, seed);
    auto gen = train_generator(bench, EvidenceMode::both, n_statements, 3, mix_seed(seed, "g"));
    auto stmts = cached_statement_map(bench, n_statements);
    fusion.push_back(eval_accuracy(bench, gen, EvidenceMode::both, &stmts));
    long correct = 0;
    for (const auto& ex : bench.splits.test) {
      auto label = self_consistency_predict(gen, bench.vocab, ex, bench.docs.at(ex.qid),
                                            stmts.at(ex.qid));
      if (label == ex.answer) ++correct;
    }
    voting.push_back(static_cast<double>(correct) /
                     static_cast<double>(bench.splits.test.size()));
  }
  int wins = 0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (fusion[i] >= voting[i]) ++wins;
  }
  std::string detail = "fusion=" + fmt(mean(fusion)) + " voting=" + fmt(mean(voting)) +
                       " wins=" + std::to_string(wins) + "/5";
  require(wins >= 3, "fusion >= voting in only " + std::to_string(wins) + "/5 seeds (" + detail + ")");
  return detail;
}

// ---------------------------------------------------------------------------
// criterion 9: directional Fig. 5 (statement-count sweep)

std::string criterion_fig5(const std::string&) {
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  const std::vector<int> counts = {1, 3, 5, 7, 9};
  SynthSpec spec;
  spec.n_entities = 60;
  spec.n_hypernyms = 10;
  spec.n_properties = 8;
  spec.distractor_docs = 2;
  spec.gold_doc_rate = 0.5;
  spec.teacher_noise_rate = 0.0;
  const int n_train_statements = 5;
  const int max_stmt_len = 20;

  int interior = 0;
  std::vector<double> mean_by_count(counts.size(), 0.0);
  for (auto seed : seeds) {
    auto bench = make_bench(spec, 0.3, 9, 4, seed);
    // IAG-student pipeline, trained with 5 statements
    Seq2SeqModel warm =
        train_generator(bench, EvidenceMode::retrieval_only, 0, 1, mix_seed(seed, "warm"));
    StatementCache cache = bench.cache;
    compute_confidences(warm, bench.vocab, bench.splits.train, bench.docs, cache);
    Seq2SeqModel inductor(desk_model(bench.vocab.size()), mix_seed(seed, "ind-init"));
    distill_train(inductor, bench.vocab, bench.splits.train, {}, cache, DistillStrategy::q_weight,
                  desk_train(10, mix_seed(seed, "distill")), n_train_statements);
    Seq2SeqModel gen = train_generator(bench, EvidenceMode::both, n_train_statements, 2,
                                       mix_seed(seed, "teach"));
    {
      TrainConfig tc = desk_train(1, mix_seed(seed, "finalize"));
      finalize_generator(gen, inductor, bench.vocab, bench.splits.train, bench.docs,
                         n_train_statements, 0.7, max_stmt_len, tc);
    }
    // one sample set per question, prefix-truncated per count
    auto all_stmts = student_statement_map(bench, inductor, counts.back(), max_stmt_len,
                                           mix_seed(seed, "sweep"));
    std::vector<double> acc;
    for (size_t ci = 0; ci < counts.size(); ++ci) {
      std::map<std::string, std::vector<KnowledgeStatement>> truncated;
      for (const auto& [qid, v] : all_stmts) {
        truncated[qid] = {v.begin(), v.begin() + counts[ci]};
      }
      acc.push_back(eval_accuracy(bench, gen, EvidenceMode::both, &truncated));
      mean_by_count[ci] += acc.back();
    }
    const double mid = std::max({acc[1], acc[2], acc[3]});
    if (mid >= acc.front() && mid >= acc.back()) ++interior;
  }
  std::string detail = "mean acc by count:";
  for (size_t ci = 0; ci < counts.size(); ++ci) {
    detail += " " + std::to_string(counts[ci]) + ":" + fmt(mean_by_count[ci] / 5.0);
  }
  detail += " interior=" + std::to_string(interior) + "/5";
  require(interior >= 3, "interior maximum in only " + std::to_string(interior) + "/5 seeds (" +
                             detail + ")");
  return detail;
}

// ---------------------------------------------------------------------------
// criterion 10: determinism audit

std::string criterion_determinism(const std::string& work_dir) {
  RunConfig cfg;
  cfg.synth.n_entities = 24;
  cfg.synth.n_hypernyms = 4;
  cfg.synth.n_properties = 4;
  cfg.synth.distractor_docs = 2;
  cfg.synth.gold_doc_rate = 0.5;
  cfg.synth.teacher_noise_rate = 0.0;
  cfg.synth.seed = 3;
  cfg.seed = 3;
  cfg.m_docs = 4;
  cfg.n_statements = 3;
  cfg.n_cache = 4;
  cfg.client = ClientKind::mock;  // every run is network-free
  cfg.mock_noise = 0.3;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_len = 32;
  cfg.warmup_train = {.epochs = 1, .lr = 3e-3, .warmup_steps = 10, .batch_size = 1};
  cfg.distill_train_cfg = {.epochs = 2, .lr = 3e-3, .warmup_steps = 10, .batch_size = 1};
  cfg.finalize_train = {.epochs = 1, .lr = 3e-3, .warmup_steps = 10, .batch_size = 1};
  cfg.tailback_iterations = 40;
  cfg.tailback_lr = 1e-3;
  cfg.max_statement_len = 16;

  RunConfig a = cfg, b = cfg;
  a.out_dir = work_dir + "/determinism_a";
  b.out_dir = work_dir + "/determinism_b";
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
  Pipeline pa(a), pb(b);
  pa.run();
  pb.run();
  auto ra = MetricsReport::load(pa.report_file());
  auto rb = MetricsReport::load(pb.report_file());
  require(reports_equal(ra, rb), "two identical pipeline runs produced different reports");
  auto again = Pipeline(a).run();
  require(again.executed.empty(), "rerunning a completed pipeline re-executed stages");
  return "two full runs identical (acc=" + fmt(ra.accuracy) +
         "), rerun is a no-op, all clients mock/fixture (network-free)";
}

}  // namespace

std::vector<CriterionResult> run(const std::vector<int>& criteria, const std::string& work_dir) {
  struct Entry {
    int id;
    const char* name;
    std::function<std::string(const std::string&)> fn;
  };
  const std::vector<Entry> table = {
      {1, "gradient suite vs central finite differences", criterion_gradients},
      {2, "beam search vs differentiable beam and enumeration", criterion_beam},
      {3, "formula oracles (Eq. 2-5)", criterion_formulas},
      {4, "prompt template fidelity", criterion_prompts},
      {5, "directional Table 1 (evidence composition)", criterion_table1},
      {6, "directional Fig. 4 (warmup strategies)", criterion_fig4},
      {7, "directional Table 3 (tailback gain)", criterion_table3},
      {8, "directional Table 5 (fusion vs voting)", criterion_table5},
      {9, "directional Fig. 5 (statement-count sweep)", criterion_fig5},
      {10, "determinism audit", criterion_determinism},
  };
  fs::create_directories(work_dir);
  std::vector<CriterionResult> results;
  for (const auto& entry : table) {
    if (!criteria.empty() &&
        std::find(criteria.begin(), criteria.end(), entry.id) == criteria.end()) {
      continue;
    }
    CriterionResult r;
    r.id = entry.id;
    r.name = entry.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.detail = entry.fn(work_dir);
      r.passed = true;
    } catch (const std::exception& e) {
      r.detail = e.what();
      r.passed = false;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%.1fs) - %s\n", r.passed ? "PASS" : "FAIL", r.id,
                r.name.c_str(), r.seconds, r.detail.c_str());
    std::fflush(stdout);
    results.push_back(std::move(r));
  }
  return results;
}

bool all_passed(const std::vector<CriterionResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return !results.empty();
}

}  // namespace iag::accept
