// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "iag/pipeline.hpp"

using namespace iag;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& dir) {
  RunConfig cfg;
  cfg.out_dir = dir;
  cfg.synth.n_entities = 24;
  cfg.synth.n_hypernyms = 4;
  cfg.synth.n_properties = 4;
  cfg.synth.distractor_docs = 2;
  cfg.synth.gold_doc_rate = 0.5;
  cfg.synth.teacher_noise_rate = 0.0;
  cfg.synth.seed = 1;
  cfg.m_docs = 4;
  cfg.n_statements = 3;
  cfg.n_cache = 4;
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
  cfg.seed = 1;
  cfg.seeds = {1, 2};
  return cfg;
}

std::string fresh_dir(const std::string& name) {
  auto dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config hash is stable, seed-sensitive and out_dir-insensitive") {
  auto a = tiny_config("/tmp/iag_a");
  auto b = tiny_config("/tmp/iag_b");
  CHECK(a.hash() == b.hash());
  b.seed = 2;
  CHECK(a.hash() != b.hash());
  auto c = tiny_config("/tmp/iag_c");
  c.n_statements = 4;
  CHECK(a.hash() != c.hash());
}

TEST_CASE("config validation rejects inconsistent settings") {
  auto cfg = tiny_config("/tmp/iag_v");
  cfg.m_docs = 0;
  cfg.n_statements = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config("/tmp/iag_v");
  cfg.client = ClientKind::http;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config("/tmp/iag_v");
  cfg.train_frac = 0.9;
  cfg.dev_frac = 0.2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("split_dataset is deterministic with disjoint covering splits") {
  auto synth = synth_generate(tiny_config("/tmp/x").synth);
  auto a = split_dataset(synth.dataset, 0.7, 0.15, 9);
  auto b = split_dataset(synth.dataset, 0.7, 0.15, 9);
  CHECK(a.train.size() == b.train.size());
  CHECK(a.train.size() + a.dev.size() + a.test.size() == synth.dataset.size());
  for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].qid == b.train[i].qid);
  auto c = split_dataset(synth.dataset, 0.7, 0.15, 10);
  bool any_difference = false;
  for (size_t i = 0; i < std::min(a.train.size(), c.train.size()); ++i) {
    any_difference = any_difference || a.train[i].qid != c.train[i].qid;
  }
  CHECK(any_difference);
}

TEST_CASE("metrics report round-trips and equality ignores wall clock") {
  MetricsReport r;
  r.accuracy = 0.75;
  r.correct = 3;
  r.total = 4;
  r.config_hash = "abc";
  r.seed = 7;
  r.mode = "both";
  r.source = "teacher_cache";
  r.wall_clock_sec = 1.25;
  r.predictions.push_back({"q1", Label::yes, -0.1, -2.3});
  const auto path = fresh_dir("iag_report_test") + ".json";
  r.save(path);
  auto loaded = MetricsReport::load(path);
  CHECK(reports_equal(r, loaded));
  loaded.wall_clock_sec = 99.0;
  CHECK(reports_equal(r, loaded));
  loaded.predictions[0].log_prob_yes = -0.2;
  CHECK_FALSE(reports_equal(r, loaded));
  fs::remove(path);
}

TEST_CASE("evaluate errors list every qid lacking statements in induction modes") {
  auto cfg = tiny_config(fresh_dir("iag_eval_err"));
  auto synth = synth_generate(cfg.synth);
  std::vector<std::string> texts = {"yes no"};
  for (const auto& ex : synth.dataset) texts.push_back(ex.question);
  auto vocab = Vocab::build(texts, 1);
  Seq2SeqModel gen(cfg.model_config(vocab.size()), 1);
  std::vector<QAExample> two(synth.dataset.begin(), synth.dataset.begin() + 2);
  std::map<std::string, std::vector<Document>> docs;
  for (const auto& ex : two) docs[ex.qid] = {};
  try {
    evaluate_dataset(gen, vocab, two, docs, EvidenceMode::both, nullptr, "h", 1);
    FAIL("expected error");
  } catch (const StageError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(two[0].qid) != std::string::npos);
    CHECK(msg.find(two[1].qid) != std::string::npos);
  }
}

TEST_CASE("full student pipeline runs, reruns as a no-op and resumes mid-chain") {
  auto cfg = tiny_config(fresh_dir("iag_pipe_student"));
  Pipeline pipe(cfg);
  auto result = pipe.run();
  CHECK(result.executed == pipe.stage_names());
  CHECK(fs::exists(pipe.report_file()));
  CHECK(fs::exists(pipe.predictions_file()));
  CHECK(fs::exists(pipe.teach_ckpt() + "/meta.json"));

  auto report = MetricsReport::load(pipe.report_file());
  CHECK(report.total > 0);
  CHECK(report.accuracy >= 0.0);
  CHECK(report.accuracy <= 1.0);
  CHECK(report.config_hash == cfg.hash());
  CHECK(report.source == "student");
  std::ifstream preds(pipe.predictions_file());
  long lines = 0;
  for (std::string line; std::getline(preds, line);) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == report.total);

  // identical config: nothing re-executes
  auto again = Pipeline(cfg).run();
  CHECK(again.executed.empty());
  CHECK(reports_equal(report, MetricsReport::load(pipe.report_file())));

  // deleting only the tailback checkpoint re-runs exactly its dependents
  fs::remove_all(pipe.tailback_ckpt());
  auto resumed = Pipeline(cfg).run();
  CHECK(resumed.executed == std::vector<std::string>{"tailback", "finalize", "evaluate"});
  CHECK(reports_equal(report, MetricsReport::load(pipe.report_file())));
}

TEST_CASE("two pipeline runs with one config and seed yield identical reports") {
  auto cfg_a = tiny_config(fresh_dir("iag_pipe_det_a"));
  auto cfg_b = tiny_config(fresh_dir("iag_pipe_det_b"));
  Pipeline pa(cfg_a), pb(cfg_b);
  pa.run();
  pb.run();
  auto ra = MetricsReport::load(pa.report_file());
  auto rb = MetricsReport::load(pb.report_file());
  CHECK(reports_equal(ra, rb));
  fs::remove_all(cfg_a.out_dir);
  fs::remove_all(cfg_b.out_dir);
}

TEST_CASE("retrieval pipeline needs no inductor or statement artifacts") {
  auto cfg = tiny_config(fresh_dir("iag_pipe_retrieval"));
  cfg.kind = PipelineKind::retrieval;
  cfg.eval_mode = EvidenceMode::retrieval_only;
  cfg.eval_source = EvalSource::none;
  Pipeline pipe(cfg);
  auto result = pipe.run();
  CHECK(result.executed == std::vector<std::string>{"data", "index", "warmup", "evaluate"});
  CHECK_FALSE(fs::exists(pipe.statements_file()));
  CHECK_FALSE(fs::exists(pipe.distill_ckpt()));
  auto report = MetricsReport::load(pipe.report_file());
  CHECK(report.mode == "retrieval_only");
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("config change reruns every stage from the top") {
  auto cfg = tiny_config(fresh_dir("iag_pipe_rehash"));
  cfg.kind = PipelineKind::retrieval;
  cfg.eval_mode = EvidenceMode::retrieval_only;
  cfg.eval_source = EvalSource::none;
  Pipeline(cfg).run();
  cfg.warmup_train.epochs = 2;
  auto result = Pipeline(cfg).run();
  CHECK(result.executed.size() == 4);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("gpt pipeline with teacher statements evaluates from the cache") {
  auto cfg = tiny_config(fresh_dir("iag_pipe_gpt"));
  cfg.kind = PipelineKind::gpt;
  cfg.eval_mode = EvidenceMode::both;
  cfg.eval_source = EvalSource::teacher_cache;
  Pipeline pipe(cfg);
  auto result = pipe.run();
  CHECK(result.executed ==
        std::vector<std::string>{"data", "index", "elicit", "gpt_train", "evaluate"});
  auto report = MetricsReport::load(pipe.report_file());
  CHECK(report.source == "teacher_cache");
  CHECK(report.total > 0);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("sweep at count zero equals retrieval-only evaluation exactly") {
  auto cfg = tiny_config(fresh_dir("iag_sweep"));
  cfg.kind = PipelineKind::gpt;
  cfg.eval_mode = EvidenceMode::both;
  cfg.eval_source = EvalSource::teacher_cache;
  cfg.seeds = {1};
  auto sweep = sweep_statement_count(cfg, {0, 2});
  REQUIRE(sweep.counts == std::vector<int>{0, 2});
  REQUIRE(sweep.per_seed.size() == 2);
  CHECK(fs::exists(sweep.csv_path));
  CHECK(fs::exists(sweep.svg_path));

  // direct retrieval-only evaluation on the same artifacts
  RunConfig seed_cfg = cfg.with_seed(1);
  Pipeline pipe(seed_cfg);
  auto vocab = pipe.load_vocab();
  auto splits = pipe.load_splits();
  auto docs = pipe.load_docs_map();
  auto gen = Checkpoint::load(pipe.final_ckpt(), vocab.hash());
  auto direct = evaluate_dataset(*gen, vocab, splits.test, docs, EvidenceMode::retrieval_only,
                                 nullptr, seed_cfg.hash(), 1);
  CHECK(sweep.per_seed[0][0] == direct.accuracy);

  // counts above the cache depth are an error
  CHECK_THROWS_WITH_AS(sweep_statement_count(cfg, {cfg.cache_samples() + 1}),
                       doctest::Contains("exceeds cached samples"), StageError);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("fusion and voting agree at N = 1 and consume the same cache") {
  auto cfg = tiny_config(fresh_dir("iag_compare"));
  cfg.kind = PipelineKind::gpt;
  cfg.eval_mode = EvidenceMode::both;
  cfg.eval_source = EvalSource::teacher_cache;
  cfg.n_statements = 1;
  cfg.seeds = {1, 2};
  auto result = compare_fusion_vs_voting(cfg);
  REQUIRE(result.fusion_acc.size() == 2);
  for (size_t i = 0; i < result.fusion_acc.size(); ++i) {
    CHECK(result.fusion_acc[i] == result.voting_acc[i]);
  }
  CHECK(fs::exists(result.csv_path));
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("svg plot writer emits a well-formed polyline chart") {
  const auto path = fresh_dir("iag_plot") + ".svg";
  write_line_plot_svg(path, {1, 3, 5}, {0.5, 0.8, 0.7}, "count", "accuracy");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content.find("<svg") != std::string::npos);
  CHECK(content.find("polyline") != std::string::npos);
  CHECK(content.find("accuracy") != std::string::npos);
  fs::remove(path);
}
