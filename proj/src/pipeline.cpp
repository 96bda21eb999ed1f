// SPDX-License-Identifier: Apache-2.0
#include "iag/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "iag/completion.hpp"
#include "iag/dataset.hpp"
#include "iag/optim.hpp"

namespace iag {

namespace fs = std::filesystem;
using nlohmann::json;

SplitSet split_dataset(const std::vector<QAExample>& all, double train_frac, double dev_frac,
                       std::uint64_t seed) {
  std::vector<size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_train = static_cast<size_t>(train_frac * static_cast<double>(all.size()));
  const size_t n_dev = static_cast<size_t>(dev_frac * static_cast<double>(all.size()));
  SplitSet s;
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& ex = all[order[i]];
    if (i < n_train) {
      s.train.push_back(ex);
    } else if (i < n_train + n_dev) {
      s.dev.push_back(ex);
    } else {
      s.test.push_back(ex);
    }
  }
  return s;
}

std::map<std::string, std::vector<Document>> docs_map(const Bm25Index& index,
                                                      const std::vector<QAExample>& dataset,
                                                      int m_docs) {
  std::map<std::string, std::vector<Document>> out;
  for (const auto& ex : dataset) {
    out[ex.qid] = m_docs > 0 ? index.retrieve(ex.question, m_docs) : std::vector<Document>{};
  }
  return out;
}

json MetricsReport::to_json() const {
  json j;
  j["accuracy"] = accuracy;
  j["correct"] = correct;
  j["total"] = total;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["mode"] = mode;
  j["source"] = source;
  j["wall_clock_sec"] = wall_clock_sec;
  json preds = json::array();
  for (const auto& p : predictions) {
    preds.push_back({{"qid", p.qid},
                     {"prediction", to_string(p.prediction)},
                     {"log_prob_yes", p.log_prob_yes},
                     {"log_prob_no", p.log_prob_no}});
  }
  j["predictions"] = preds;
  return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.correct = j.at("correct").get<long>();
  r.total = j.at("total").get<long>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.mode = j.at("mode").get<std::string>();
  r.source = j.at("source").get<std::string>();
  r.wall_clock_sec = j.at("wall_clock_sec").get<double>();
  for (const auto& p : j.at("predictions")) {
    PredictionRow row;
    row.qid = p.at("qid").get<std::string>();
    row.prediction = label_from_string(p.at("prediction").get<std::string>());
    row.log_prob_yes = p.at("log_prob_yes").get<double>();
    row.log_prob_no = p.at("log_prob_no").get<double>();
    r.predictions.push_back(std::move(row));
  }
  return r;
}

void MetricsReport::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write report: " + path);
  out << to_json().dump(2) << "\n";
}

MetricsReport MetricsReport::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("report not found: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw StageError("report corrupt: " + path);
  return from_json(j);
}

bool reports_equal(const MetricsReport& a, const MetricsReport& b) {
  if (a.accuracy != b.accuracy || a.correct != b.correct || a.total != b.total) return false;
  if (a.config_hash != b.config_hash || a.seed != b.seed) return false;
  if (a.mode != b.mode || a.source != b.source) return false;
  if (a.predictions.size() != b.predictions.size()) return false;
  for (size_t i = 0; i < a.predictions.size(); ++i) {
    const auto& x = a.predictions[i];
    const auto& y = b.predictions[i];
    if (x.qid != y.qid || x.prediction != y.prediction) return false;
    if (x.log_prob_yes != y.log_prob_yes || x.log_prob_no != y.log_prob_no) return false;
  }
  return true;
}

MetricsReport evaluate_dataset(
    const Seq2SeqModel& gen, const Vocab& vocab, const std::vector<QAExample>& dataset,
    const std::map<std::string, std::vector<Document>>& docs_by_qid, EvidenceMode mode,
    const std::map<std::string, std::vector<KnowledgeStatement>>* statements_by_qid,
    const std::string& config_hash, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  if (mode != EvidenceMode::retrieval_only) {
    std::string missing;
    for (const auto& ex : dataset) {
      if (statements_by_qid == nullptr || !statements_by_qid->count(ex.qid) ||
          statements_by_qid->at(ex.qid).empty()) {
        missing += missing.empty() ? ex.qid : ", " + ex.qid;
      }
    }
    if (!missing.empty()) {
      throw StageError("evaluate: induction mode lacks statements for qids: " + missing);
    }
  }
  MetricsReport report;
  report.config_hash = config_hash;
  report.seed = seed;
  report.mode = to_string(mode);
  for (const auto& ex : dataset) {
    EvidenceSet ev;
    ev.question = ex;
    if (mode != EvidenceMode::induction_only) {
      auto it = docs_by_qid.find(ex.qid);
      if (it != docs_by_qid.end()) ev.documents = it->second;
    }
    if (mode != EvidenceMode::retrieval_only) ev.statements = statements_by_qid->at(ex.qid);
    auto pred = predict(gen, vocab, ev);
    if (pred.label == ex.answer) ++report.correct;
    ++report.total;
    report.predictions.push_back({ex.qid, pred.label, pred.log_prob_yes, pred.log_prob_no});
  }
  report.accuracy =
      report.total == 0 ? 0.0 : static_cast<double>(report.correct) / static_cast<double>(report.total);
  report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::string Pipeline::dataset_file() const { return cfg_.out_dir + "/data/dataset.jsonl"; }
std::string Pipeline::corpus_file() const { return cfg_.out_dir + "/data/corpus.jsonl"; }
std::string Pipeline::teacher_file() const { return cfg_.out_dir + "/data/teacher.jsonl"; }
std::string Pipeline::splits_file() const { return cfg_.out_dir + "/data/splits.json"; }
std::string Pipeline::vocab_file() const { return cfg_.out_dir + "/data/vocab.txt"; }
std::string Pipeline::index_file() const { return cfg_.out_dir + "/index.bm25"; }
std::string Pipeline::statements_file() const { return cfg_.out_dir + "/statements.jsonl"; }
std::string Pipeline::warmup_ckpt() const { return cfg_.out_dir + "/ckpt_warmup"; }
std::string Pipeline::distill_ckpt() const { return cfg_.out_dir + "/ckpt_distill"; }
std::string Pipeline::teach_ckpt() const { return cfg_.out_dir + "/ckpt_teach"; }
std::string Pipeline::tailback_ckpt() const { return cfg_.out_dir + "/ckpt_tailback"; }
std::string Pipeline::final_ckpt() const { return cfg_.out_dir + "/ckpt_final"; }
std::string Pipeline::report_file() const { return cfg_.out_dir + "/report.json"; }
std::string Pipeline::predictions_file() const { return cfg_.out_dir + "/predictions.jsonl"; }
std::string Pipeline::manifest_file() const { return cfg_.out_dir + "/manifest.json"; }

std::vector<std::string> Pipeline::stage_names() const {
  switch (cfg_.kind) {
    case PipelineKind::retrieval:
      return {"data", "index", "warmup", "evaluate"};
    case PipelineKind::gpt:
      return {"data", "index", "elicit", "gpt_train", "evaluate"};
    case PipelineKind::student:
      if (cfg_.use_tailback) {
        return {"data",  "index",    "elicit",   "warmup",  "distill",
                "teach", "tailback", "finalize", "evaluate"};
      }
      return {"data", "index", "elicit", "warmup", "distill", "teach", "finalize", "evaluate"};
  }
  throw ConfigError("unknown pipeline kind");
}

bool Pipeline::artifacts_present(const std::string& stage) const {
  auto exists = [](const std::string& p) { return fs::exists(p); };
  auto ckpt_exists = [&](const std::string& dir) {
    return exists(dir + "/meta.json") && exists(dir + "/tensors.bin");
  };
  if (stage == "data") {
    return exists(dataset_file()) && exists(corpus_file()) && exists(splits_file()) &&
           exists(vocab_file());
  }
  if (stage == "index") return exists(index_file());
  if (stage == "elicit") return exists(statements_file());
  if (stage == "warmup") return ckpt_exists(warmup_ckpt());
  if (stage == "distill") return ckpt_exists(distill_ckpt());
  if (stage == "teach") return ckpt_exists(teach_ckpt());
  if (stage == "tailback") return ckpt_exists(tailback_ckpt());
  if (stage == "finalize" || stage == "gpt_train") return ckpt_exists(final_ckpt());
  if (stage == "evaluate") return exists(report_file()) && exists(predictions_file());
  throw ConfigError("unknown stage: " + stage);
}

PipelineResult Pipeline::run() {
  fs::create_directories(cfg_.out_dir + "/data");
  json manifest;
  if (fs::exists(manifest_file())) {
    std::ifstream in(manifest_file(), std::ios::binary);
    manifest = json::parse(in, nullptr, false);
    if (manifest.is_discarded()) manifest = json::object();
  } else {
    manifest = json::object();
  }
  if (!manifest.contains("stages")) manifest["stages"] = json::object();

  PipelineResult result;
  result.report_path = report_file();
  const std::string h = cfg_.hash();
  bool upstream_ran = false;
  for (const auto& name : stage_names()) {
    bool need = upstream_ran;
    if (!need) {
      const auto& st = manifest["stages"];
      need = !(st.contains(name) && st.at(name).value("hash", "") == h &&
               st.at(name).value("done", false));
    }
    if (!need) need = !artifacts_present(name);
    if (need) {
      try {
        run_stage(name);
      } catch (const std::exception& e) {
        throw StageError("stage '" + name + "' failed: " + e.what());
      }
      manifest["stages"][name] = {{"hash", h}, {"done", true}};
      std::ofstream out(manifest_file(), std::ios::binary);
      out << manifest.dump(2) << "\n";
      result.executed.push_back(name);
      upstream_ran = true;
    }
  }
  return result;
}

void Pipeline::run_stage(const std::string& name) {
  fs::create_directories(cfg_.out_dir + "/data");
  if (name == "data") {
    stage_data();
  } else if (name == "index") {
    stage_index();
  } else if (name == "elicit") {
    stage_elicit();
  } else if (name == "warmup") {
    stage_warmup();
  } else if (name == "distill") {
    stage_distill();
  } else if (name == "teach") {
    stage_teach();
  } else if (name == "tailback") {
    stage_tailback();
  } else if (name == "finalize") {
    stage_finalize();
  } else if (name == "gpt_train") {
    stage_gpt_train();
  } else if (name == "evaluate") {
    stage_evaluate();
  } else {
    throw ConfigError("unknown stage: " + name);
  }
}

void Pipeline::stage_data() {
  std::vector<QAExample> dataset;
  std::vector<Document> corpus;
  std::map<std::string, KnowledgeStatement> teacher;
  if (cfg_.dataset_path.empty()) {
    auto synth = synth_generate(cfg_.synth);
    synth_check_label_consistency(synth);
    dataset = std::move(synth.dataset);
    corpus = std::move(synth.corpus);
    teacher = std::move(synth.teacher_table);
  } else {
    dataset = load_dataset(cfg_.dataset_path);
    corpus = load_corpus(cfg_.corpus_path);
    if (!cfg_.teacher_path.empty()) teacher = load_teacher_table(cfg_.teacher_path);
  }
  save_dataset(dataset, dataset_file());
  save_corpus(corpus, corpus_file());
  if (!teacher.empty()) save_teacher_table(teacher, teacher_file());

  auto splits = split_dataset(dataset, cfg_.train_frac, cfg_.dev_frac, cfg_.seed);
  json sj;
  auto qids = [](const std::vector<QAExample>& v) {
    std::vector<std::string> out;
    for (const auto& ex : v) out.push_back(ex.qid);
    return out;
  };
  sj["train"] = qids(splits.train);
  sj["dev"] = qids(splits.dev);
  sj["test"] = qids(splits.test);
  std::ofstream sout(splits_file(), std::ios::binary);
  if (!sout) throw StageError("cannot write splits file");
  sout << sj.dump(2) << "\n";

  std::vector<std::string> vocab_corpus;
  for (const auto& ex : dataset) {
    vocab_corpus.push_back(ex.question);
    for (const auto& f : ex.facts) vocab_corpus.push_back(f);
  }
  for (const auto& d : corpus) vocab_corpus.push_back(d.text);
  for (const auto& [qid, ks] : teacher) vocab_corpus.push_back(ks.text);
  vocab_corpus.push_back("yes no");
  Vocab::build(vocab_corpus, 1).save(vocab_file());
}

void Pipeline::stage_index() {
  auto corpus = load_corpus(corpus_file());
  Bm25Index::build(corpus, cfg_.bm25_k1, cfg_.bm25_b).save(index_file());
}

std::unique_ptr<CompletionClient> Pipeline::make_client() const {
  switch (cfg_.client) {
    case ClientKind::mock: {
      if (!fs::exists(teacher_file())) {
        throw StageError("mock client needs a teacher table at " + teacher_file());
      }
      auto table = load_teacher_table(teacher_file());
      auto dataset = load_dataset(dataset_file());
      return std::make_unique<MockTeacher>(table, dataset, cfg_.mock_noise,
                                           mix_seed(cfg_.seed, "elicit"));
    }
    case ClientKind::http: {
      const char* token = cfg_.token_env.empty() ? nullptr : std::getenv(cfg_.token_env.c_str());
      return std::make_unique<HttpClient>(cfg_.endpoint, token ? token : "", 30, 3,
                                          cfg_.fixture_path);
    }
    case ClientKind::fixture:
      return std::make_unique<FixtureClient>(cfg_.fixture_path);
  }
  throw ConfigError("unknown client kind");
}

void Pipeline::stage_elicit() {
  auto dataset = load_dataset(dataset_file());
  auto client = make_client();
  auto tmpl = cfg_.prompt_style == PromptStyle::inductive ? inductive_template() : trivial_template();
  StatementCache cache;
  const int n = cfg_.cache_samples();
  for (const auto& ex : dataset) {
    auto statements =
        sample_statements(*client, ex.question, tmpl, n, cfg_.temperature, cfg_.max_tokens);
    std::vector<std::string> texts;
    texts.reserve(statements.size());
    for (auto& s : statements) texts.push_back(std::move(s.text));
    cache.put(ex.qid, std::move(texts));
  }
  cache.save(statements_file());
}

Vocab Pipeline::load_vocab() const { return Vocab::load(vocab_file()); }

SplitSet Pipeline::load_splits() const {
  auto dataset = load_dataset(dataset_file());
  std::map<std::string, const QAExample*> by_qid;
  for (const auto& ex : dataset) by_qid[ex.qid] = &ex;
  std::ifstream in(splits_file(), std::ios::binary);
  if (!in) throw ConfigError("splits file not found: " + splits_file());
  json j = json::parse(in);
  SplitSet s;
  auto fill = [&](const char* key, std::vector<QAExample>& out) {
    for (const auto& q : j.at(key)) {
      auto it = by_qid.find(q.get<std::string>());
      if (it == by_qid.end()) throw StageError("splits file references unknown qid");
      out.push_back(*it->second);
    }
  };
  fill("train", s.train);
  fill("dev", s.dev);
  fill("test", s.test);
  return s;
}

std::map<std::string, std::vector<Document>> Pipeline::load_docs_map() const {
  auto index = Bm25Index::load(index_file());
  auto dataset = load_dataset(dataset_file());
  return docs_map(index, dataset, cfg_.m_docs);
}

void Pipeline::stage_warmup() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  Seq2SeqModel gen(cfg_.model_config(vocab.size()), mix_seed(cfg_.seed, "gen-init"));
  std::vector<EvidenceSet> evidence;
  for (const auto& ex : splits.train) {
    EvidenceSet ev;
    ev.question = ex;
    ev.documents = docs.at(ex.qid);
    evidence.push_back(std::move(ev));
  }
  TrainConfig tc = cfg_.warmup_train;
  tc.seed = mix_seed(cfg_.seed, "warmup");
  auto stats = finetune_generator(gen, vocab, evidence, EvidenceMode::retrieval_only, tc);
  Checkpoint::save(gen, warmup_ckpt(), vocab.hash(), static_cast<long>(stats.step_losses.size()));
}

void Pipeline::stage_distill() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  auto gen = Checkpoint::load(warmup_ckpt(), vocab.hash());
  auto cache = StatementCache::load(statements_file());
  compute_confidences(*gen, vocab, splits.train, docs, cache);
  cache.save(statements_file());

  Seq2SeqModel inductor(cfg_.model_config(vocab.size()), mix_seed(cfg_.seed, "ind-init"));
  TrainConfig tc = cfg_.distill_train_cfg;
  tc.seed = mix_seed(cfg_.seed, "distill");
  auto stats = distill_train(inductor, vocab, splits.train, splits.dev, cache, cfg_.strategy, tc,
                             cfg_.n_statements);
  Checkpoint::save(inductor, distill_ckpt(), vocab.hash(),
                   static_cast<long>(stats.step_losses.size()));
  std::ofstream trace(cfg_.out_dir + "/distill_trace.csv", std::ios::binary);
  trace << "epoch,mean_loss,heldout_statement_nll\n";
  for (size_t e = 0; e < stats.epoch_losses.size(); ++e) {
    trace << e + 1 << "," << stats.epoch_losses[e] << ","
          << (e < stats.eval_points.size() ? stats.eval_points[e].second : 0.0) << "\n";
  }
}

// The generator that scores statements (tailback feedback, finalize init) is
// first taught to read statement segments IAG-GPT style: fine-tuned from the
// warmup checkpoint on documents plus cached teacher statements. A from-
// scratch retrieval-only generator has no statement-reading ability on
// corpora without gold documents.
void Pipeline::stage_teach() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  auto cache = StatementCache::load(statements_file());
  auto gen = Checkpoint::load(warmup_ckpt(), vocab.hash());
  std::vector<EvidenceSet> evidence;
  for (const auto& ex : splits.train) {
    EvidenceSet ev;
    ev.question = ex;
    ev.documents = docs.at(ex.qid);
    const auto& entry = cache.get(ex.qid);
    const int n = std::min<int>(cfg_.n_statements, static_cast<int>(entry.samples.size()));
    for (int i = 0; i < n; ++i) {
      KnowledgeStatement ks;
      ks.text = entry.samples[static_cast<size_t>(i)];
      ks.source = StatementSource::teacher;
      ev.statements.push_back(std::move(ks));
    }
    evidence.push_back(std::move(ev));
  }
  TrainConfig tc = cfg_.finalize_train;
  tc.seed = mix_seed(cfg_.seed, "teach");
  auto stats = finetune_generator(*gen, vocab, evidence, EvidenceMode::both, tc);
  Checkpoint::save(*gen, teach_ckpt(), vocab.hash(), static_cast<long>(stats.step_losses.size()));
}

void Pipeline::stage_tailback() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  auto gen = Checkpoint::load(teach_ckpt(), vocab.hash());
  auto inductor = Checkpoint::load(distill_ckpt(), vocab.hash());
  TailbackConfig tc;
  tc.iterations = cfg_.tailback_iterations;
  tc.n_statements = cfg_.n_statements;
  tc.max_statement_len = cfg_.max_statement_len;
  tc.variant = cfg_.variant;
  tc.lr = cfg_.tailback_lr;
  tc.eval_every = cfg_.tailback_eval_every;
  tc.seed = mix_seed(cfg_.seed, "tailback");
  tc.trace_path = cfg_.out_dir + "/tailback_trace.csv";
  tailback_train(*inductor, *gen, vocab, splits.train, splits.dev, docs, tc);
  Checkpoint::save(*inductor, tailback_ckpt(), vocab.hash(), cfg_.tailback_iterations);
}

void Pipeline::stage_finalize() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  auto gen = Checkpoint::load(teach_ckpt(), vocab.hash());
  auto inductor =
      Checkpoint::load(cfg_.use_tailback ? tailback_ckpt() : distill_ckpt(), vocab.hash());
  TrainConfig tc = cfg_.finalize_train;
  tc.seed = mix_seed(cfg_.seed, "finalize");
  auto stats = finalize_generator(*gen, *inductor, vocab, splits.train, docs, cfg_.n_statements,
                                  cfg_.temperature, cfg_.max_statement_len, tc);
  Checkpoint::save(*gen, final_ckpt(), vocab.hash(), static_cast<long>(stats.step_losses.size()));
}

void Pipeline::stage_gpt_train() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  auto cache = StatementCache::load(statements_file());
  Seq2SeqModel gen(cfg_.model_config(vocab.size()), mix_seed(cfg_.seed, "gen-init"));
  std::vector<EvidenceSet> evidence;
  for (const auto& ex : splits.train) {
    EvidenceSet ev;
    ev.question = ex;
    ev.documents = docs.at(ex.qid);
    const auto& entry = cache.get(ex.qid);
    const int n = std::min<int>(cfg_.n_statements, static_cast<int>(entry.samples.size()));
    for (int i = 0; i < n; ++i) {
      KnowledgeStatement ks;
      ks.text = entry.samples[static_cast<size_t>(i)];
      ks.source = StatementSource::teacher;
      ev.statements.push_back(std::move(ks));
    }
    evidence.push_back(std::move(ev));
  }
  TrainConfig tc = cfg_.finalize_train;
  tc.seed = mix_seed(cfg_.seed, "gpt-train");
  auto stats = finetune_generator(gen, vocab, evidence, cfg_.eval_mode, tc);
  Checkpoint::save(gen, final_ckpt(), vocab.hash(), static_cast<long>(stats.step_losses.size()));
}

std::map<std::string, std::vector<KnowledgeStatement>> Pipeline::eval_statements(
    const std::vector<QAExample>& dataset, int n) const {
  std::map<std::string, std::vector<KnowledgeStatement>> out;
  if (n <= 0) return out;
  const auto vocab = load_vocab();
  switch (cfg_.eval_source) {
    case EvalSource::none:
      return out;
    case EvalSource::teacher_cache: {
      auto cache = StatementCache::load(statements_file());
      for (const auto& ex : dataset) {
        const auto& entry = cache.get(ex.qid);
        if (static_cast<int>(entry.samples.size()) < n) {
          throw StageError("statement count " + std::to_string(n) +
                           " exceeds cached samples for qid " + ex.qid);
        }
        std::vector<KnowledgeStatement> sts;
        for (int i = 0; i < n; ++i) {
          KnowledgeStatement ks;
          ks.text = entry.samples[static_cast<size_t>(i)];
          ks.source = StatementSource::teacher;
          sts.push_back(std::move(ks));
        }
        out[ex.qid] = std::move(sts);
      }
      return out;
    }
    case EvalSource::student: {
      auto inductor = Checkpoint::load(
          cfg_.use_tailback && cfg_.kind == PipelineKind::student ? tailback_ckpt() : distill_ckpt(),
          vocab.hash());
      for (const auto& ex : dataset) {
        out[ex.qid] = sample_student_statements(*inductor, vocab, ex.question, n, cfg_.temperature,
                                                cfg_.max_statement_len,
                                                mix_seed(cfg_.seed, "eval-stmt"));
      }
      return out;
    }
  }
  return out;
}

void Pipeline::stage_evaluate() {
  auto vocab = load_vocab();
  auto splits = load_splits();
  auto docs = load_docs_map();
  const std::string gen_ckpt =
      cfg_.kind == PipelineKind::retrieval ? warmup_ckpt() : final_ckpt();
  auto gen = Checkpoint::load(gen_ckpt, vocab.hash());

  std::map<std::string, std::vector<KnowledgeStatement>> statements;
  const std::map<std::string, std::vector<KnowledgeStatement>>* stmt_ptr = nullptr;
  if (cfg_.eval_mode != EvidenceMode::retrieval_only && cfg_.eval_source != EvalSource::none) {
    statements = eval_statements(splits.test, cfg_.n_statements);
    stmt_ptr = &statements;
  }
  auto report = evaluate_dataset(*gen, vocab, splits.test, docs, cfg_.eval_mode, stmt_ptr,
                                 cfg_.hash(), cfg_.seed);
  report.source = to_string(cfg_.eval_source);
  report.save(report_file());
  std::ofstream preds(predictions_file(), std::ios::binary);
  if (!preds) throw StageError("cannot write predictions file");
  for (const auto& p : report.predictions) {
    json j;
    j["qid"] = p.qid;
    j["prediction"] = to_string(p.prediction);
    j["log_prob_yes"] = p.log_prob_yes;
    j["log_prob_no"] = p.log_prob_no;
    preds << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Ablation drivers

namespace {

double run_eval_with_statements(
    const Seq2SeqModel& gen, const Vocab& vocab, const std::vector<QAExample>& test,
    const std::map<std::string, std::vector<Document>>& docs,
    const std::map<std::string, std::vector<KnowledgeStatement>>& stmts, int count,
    const std::string& hash, std::uint64_t seed) {
  if (count == 0) {
    return evaluate_dataset(gen, vocab, test, docs, EvidenceMode::retrieval_only, nullptr, hash,
                            seed)
        .accuracy;
  }
  std::map<std::string, std::vector<KnowledgeStatement>> truncated;
  for (const auto& [qid, all] : stmts) {
    truncated[qid] = {all.begin(), all.begin() + count};
  }
  return evaluate_dataset(gen, vocab, test, docs, EvidenceMode::both, &truncated, hash, seed)
      .accuracy;
}

}  // namespace

SweepResult sweep_statement_count(const RunConfig& cfg, const std::vector<int>& counts) {
  SweepResult result;
  result.counts = counts;
  result.per_seed.assign(counts.size(), {});
  const int max_count = *std::max_element(counts.begin(), counts.end());
  if (max_count > cfg.cache_samples()) {
    throw StageError("sweep: count " + std::to_string(max_count) + " exceeds cached samples (" +
                     std::to_string(cfg.cache_samples()) + ")");
  }
  for (auto seed : cfg.seeds) {
    RunConfig scfg = cfg.with_seed(seed);
    Pipeline pipe(scfg);
    pipe.run();
    auto vocab = pipe.load_vocab();
    auto splits = pipe.load_splits();
    auto docs = pipe.load_docs_map();
    auto gen = Checkpoint::load(
        scfg.kind == PipelineKind::retrieval ? pipe.warmup_ckpt() : pipe.final_ckpt(), vocab.hash());
    auto stmts = pipe.eval_statements(splits.test, max_count);
    for (size_t ci = 0; ci < counts.size(); ++ci) {
      result.per_seed[ci].push_back(run_eval_with_statements(
          *gen, vocab, splits.test, docs, stmts, counts[ci], scfg.hash(), seed));
    }
  }
  std::vector<double> xs;
  for (size_t ci = 0; ci < counts.size(); ++ci) {
    double m = 0;
    for (double a : result.per_seed[ci]) m += a;
    result.mean_accuracy.push_back(m / static_cast<double>(result.per_seed[ci].size()));
    xs.push_back(static_cast<double>(counts[ci]));
  }

  fs::create_directories(cfg.out_dir);
  result.csv_path = cfg.out_dir + "/sweep.csv";
  std::ofstream csv(result.csv_path, std::ios::binary);
  csv << "count,mean_accuracy";
  for (auto seed : cfg.seeds) csv << ",seed_" << seed;
  csv << "\n";
  for (size_t ci = 0; ci < counts.size(); ++ci) {
    csv << counts[ci] << "," << result.mean_accuracy[ci];
    for (double a : result.per_seed[ci]) csv << "," << a;
    csv << "\n";
  }
  result.svg_path = cfg.out_dir + "/sweep.svg";
  write_line_plot_svg(result.svg_path, xs, result.mean_accuracy, "statements", "accuracy");
  return result;
}

CompareResult compare_fusion_vs_voting(const RunConfig& cfg) {
  CompareResult result;
  for (auto seed : cfg.seeds) {
    RunConfig scfg = cfg.with_seed(seed);
    Pipeline pipe(scfg);
    pipe.run();
    auto vocab = pipe.load_vocab();
    auto splits = pipe.load_splits();
    auto docs = pipe.load_docs_map();
    auto gen = Checkpoint::load(
        scfg.kind == PipelineKind::retrieval ? pipe.warmup_ckpt() : pipe.final_ckpt(), vocab.hash());
    auto stmts = pipe.eval_statements(splits.test, scfg.n_statements);

    auto fusion = evaluate_dataset(*gen, vocab, splits.test, docs, EvidenceMode::both, &stmts,
                                   scfg.hash(), seed);
    long correct = 0;
    for (const auto& ex : splits.test) {
      auto label = self_consistency_predict(*gen, vocab, ex, docs.at(ex.qid), stmts.at(ex.qid));
      if (label == ex.answer) ++correct;
    }
    result.fusion_acc.push_back(fusion.accuracy);
    result.voting_acc.push_back(static_cast<double>(correct) /
                                static_cast<double>(splits.test.size()));
  }
  for (double a : result.fusion_acc) result.fusion_mean += a;
  for (double a : result.voting_acc) result.voting_mean += a;
  result.fusion_mean /= static_cast<double>(result.fusion_acc.size());
  result.voting_mean /= static_cast<double>(result.voting_acc.size());

  fs::create_directories(cfg.out_dir);
  result.csv_path = cfg.out_dir + "/compare.csv";
  std::ofstream csv(result.csv_path, std::ios::binary);
  csv << "seed,fusion_accuracy,voting_accuracy\n";
  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    csv << cfg.seeds[i] << "," << result.fusion_acc[i] << "," << result.voting_acc[i] << "\n";
  }
  csv << "mean," << result.fusion_mean << "," << result.voting_mean << "\n";
  return result;
}

void write_line_plot_svg(const std::string& path, const std::vector<double>& xs,
                         const std::vector<double>& ys, const std::string& x_label,
                         const std::string& y_label) {
  if (xs.empty() || xs.size() != ys.size()) throw StageError("svg plot: bad series");
  const double w = 480, h = 320, ml = 56, mr = 16, mt = 16, mb = 44;
  double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
  for (size_t i = 0; i < xs.size(); ++i) {
    xmin = std::min(xmin, xs[i]);
    xmax = std::max(xmax, xs[i]);
    ymin = std::min(ymin, ys[i]);
    ymax = std::max(ymax, ys[i]);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write svg: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
  out << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
  for (size_t i = 0; i < xs.size(); ++i) out << px(xs[i]) << "," << py(ys[i]) << " ";
  out << "'/>\n";
  for (size_t i = 0; i < xs.size(); ++i) {
    out << "<circle cx='" << px(xs[i]) << "' cy='" << py(ys[i]) << "' r='3' fill='steelblue'/>\n";
    out << "<text x='" << px(xs[i]) << "' y='" << h - mb + 16
        << "' font-size='11' text-anchor='middle'>" << xs[i] << "</text>\n";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", ymin);
  out << "<text x='" << ml - 6 << "' y='" << py(ymin) << "' font-size='11' text-anchor='end'>"
      << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.3f", ymax);
  out << "<text x='" << ml - 6 << "' y='" << py(ymax) + 4 << "' font-size='11' text-anchor='end'>"
      << buf << "</text>\n";
  out << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 8
      << "' font-size='12' text-anchor='middle'>" << x_label << "</text>\n";
  out << "<text x='14' y='" << (mt + h - mb) / 2
      << "' font-size='12' text-anchor='middle' transform='rotate(-90 14 " << (mt + h - mb) / 2
      << ")'>" << y_label << "</text>\n";
  out << "</svg>\n";
}

}  // namespace iag
