// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver for the induction-augmented QA pipeline. Every flag can
// also be set from a TOML config file (--config run.toml); flags override
// config values. Exit codes: 0 success, 1 configuration error, 2 stage
// failure, 3 acceptance-check failure (verify).

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iag/accept.hpp"
#include "iag/pipeline.hpp"

using namespace iag;

namespace {

void bind_options(CLI::App& app, RunConfig& cfg, std::string& prompt_style, std::string& client,
                  std::string& strategy, std::string& variant, std::string& kind,
                  std::string& eval_mode, std::string& eval_source) {
  app.add_option("--out", cfg.out_dir, "output directory for run artifacts");
  app.add_option("--seed", cfg.seed, "active run seed");
  app.add_option("--seeds", cfg.seeds, "seed list for multi-seed drivers (sweep, compare)");

  app.add_option("--data.dataset", cfg.dataset_path, "external dataset JSONL (omit to synthesize)");
  app.add_option("--data.corpus", cfg.corpus_path, "external corpus JSONL");
  app.add_option("--data.teacher", cfg.teacher_path, "external teacher table JSONL");
  app.add_option("--data.fixtures", cfg.fixture_path, "completion fixture file");
  app.add_option("--data.train-frac", cfg.train_frac, "training split fraction");
  app.add_option("--data.dev-frac", cfg.dev_frac, "dev split fraction");

  app.add_option("--synth.entities", cfg.synth.n_entities, "synthetic entities");
  app.add_option("--synth.hypernyms", cfg.synth.n_hypernyms, "synthetic hypernym classes");
  app.add_option("--synth.analogs", cfg.synth.analogs_per_entity, "analogs per entity");
  app.add_option("--synth.properties", cfg.synth.n_properties, "properties per hypernym");
  app.add_option("--synth.distractors", cfg.synth.distractor_docs, "distractor docs per question");
  app.add_option("--synth.gold-doc-rate", cfg.synth.gold_doc_rate, "gold document probability");
  app.add_option("--synth.teacher-noise-rate", cfg.synth.teacher_noise_rate,
                 "teacher table corruption probability");
  app.add_option("--synth.seed", cfg.synth.seed, "synthetic generator seed");

  app.add_option("--retriever.m", cfg.m_docs, "documents retrieved per question (M)");
  app.add_option("--retriever.k1", cfg.bm25_k1, "BM25 k1");
  app.add_option("--retriever.b", cfg.bm25_b, "BM25 b");

  app.add_option("--induction.n", cfg.n_statements, "knowledge statements per question (N)");
  app.add_option("--induction.cache", cfg.n_cache, "samples cached per question (0 = max(N, 9))");
  app.add_option("--induction.temperature", cfg.temperature, "sampling temperature");
  app.add_option("--induction.style", prompt_style, "prompt style: inductive|trivial");
  app.add_option("--induction.client", client, "completion client: mock|http|fixture");
  app.add_option("--induction.mock-noise", cfg.mock_noise, "mock teacher corruption probability");
  app.add_option("--induction.endpoint", cfg.endpoint, "completion service endpoint URL");
  app.add_option("--induction.token-env", cfg.token_env,
                 "environment variable holding the service token");
  app.add_option("--induction.max-tokens", cfg.max_tokens, "completion token budget");
  app.add_option("--induction.max-statement-len", cfg.max_statement_len,
                 "decoded statement length cap");

  app.add_option("--model.d-model", cfg.d_model, "model width");
  app.add_option("--model.layers", cfg.n_layers, "encoder/decoder depth");
  app.add_option("--model.heads", cfg.n_heads, "attention heads");
  app.add_option("--model.ff", cfg.d_ff, "feed-forward width (0 = 4*d_model)");
  app.add_option("--model.max-len", cfg.max_len, "maximum sequence length");

  auto bind_train = [&app](const std::string& prefix, TrainConfig& tc) {
    app.add_option("--" + prefix + ".epochs", tc.epochs, "epochs");
    app.add_option("--" + prefix + ".lr", tc.lr, "learning rate");
    app.add_option("--" + prefix + ".warmup-steps", tc.warmup_steps, "LR warmup steps");
    app.add_option("--" + prefix + ".batch", tc.batch_size, "batch size");
  };
  bind_train("warmup", cfg.warmup_train);
  bind_train("distill", cfg.distill_train_cfg);
  bind_train("finalize", cfg.finalize_train);

  app.add_option("--tailback.iterations", cfg.tailback_iterations, "tailback iterations");
  app.add_option("--tailback.lr", cfg.tailback_lr, "tailback learning rate");
  app.add_option("--tailback.eval-every", cfg.tailback_eval_every,
                 "held-out evaluation period (0 = end only)");
  app.add_option("--tailback.variant", variant, "loss variant: eq6|alg1|eq6_unnormalized");
  app.add_flag("--tailback.enabled,!--tailback.disabled", cfg.use_tailback,
               "run the tailback stage in the student pipeline");

  app.add_option("--strategy", strategy, "distillation strategy: q_all|q_max|q_weight");
  app.add_option("--kind", kind, "pipeline kind: student|gpt|retrieval");
  app.add_option("--eval.mode", eval_mode, "evidence mode: retrieval_only|induction_only|both");
  app.add_option("--eval.source", eval_source, "statement source: teacher_cache|student|none");
}

void resolve_enums(RunConfig& cfg, const std::string& prompt_style, const std::string& client,
                   const std::string& strategy, const std::string& variant,
                   const std::string& kind, const std::string& eval_mode,
                   const std::string& eval_source) {
  if (prompt_style == "inductive") {
    cfg.prompt_style = PromptStyle::inductive;
  } else if (prompt_style == "trivial") {
    cfg.prompt_style = PromptStyle::trivial;
  } else {
    throw ConfigError("unknown prompt style: " + prompt_style);
  }
  cfg.client = client_kind_from_string(client);
  cfg.strategy = distill_strategy_from_string(strategy);
  cfg.variant = tailback_variant_from_string(variant);
  cfg.kind = pipeline_kind_from_string(kind);
  cfg.eval_mode = evidence_mode_from_string(eval_mode);
  cfg.eval_source = eval_source_from_string(eval_source);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"induction-augmented QA pipeline"};
  app.set_config("--config", "", "TOML configuration file");
  app.require_subcommand(1);

  RunConfig cfg;
  std::string prompt_style = "inductive", client = "mock", strategy = "q_weight",
              variant = "eq6", kind = "student", eval_mode = "both", eval_source = "student";
  bind_options(app, cfg, prompt_style, client, strategy, variant, kind, eval_mode, eval_source);

  std::vector<int> verify_criteria;
  std::string verify_work_dir = "acceptance_work";
  std::vector<int> sweep_counts = {0, 1, 3, 5, 7, 9};

  auto* cmd_synth = app.add_subcommand("synth", "generate the synthetic benchmark artifacts");
  auto* cmd_ingest = app.add_subcommand("ingest", "validate and import an external dataset/corpus");
  auto* cmd_index = app.add_subcommand("index", "build the BM25 index");
  auto* cmd_elicit = app.add_subcommand("elicit", "sample and cache knowledge statements");
  auto* cmd_warmup = app.add_subcommand("warmup", "retrieval-only generator fine-tune");
  auto* cmd_distill = app.add_subcommand("distill", "confidence-weighted inductor distillation");
  auto* cmd_teach = app.add_subcommand("teach", "fine-tune the generator on teacher statements");
  auto* cmd_tailback = app.add_subcommand("tailback", "differentiable-beam feedback training");
  auto* cmd_finalize = app.add_subcommand("finalize", "fine-tune the generator on student statements");
  auto* cmd_evaluate = app.add_subcommand("evaluate", "evaluate the configured checkpoint");
  auto* cmd_sweep = app.add_subcommand("sweep", "statement-count sweep over the seed list");
  cmd_sweep->add_option("--counts", sweep_counts, "statement counts to evaluate");
  auto* cmd_compare = app.add_subcommand("compare", "knowledge fusion vs self-consistency voting");
  auto* cmd_pipeline = app.add_subcommand("pipeline", "run every stage, resuming where possible");
  auto* cmd_verify = app.add_subcommand("verify", "run the acceptance criteria");
  cmd_verify->add_option("--criterion", verify_criteria, "run only these criteria (1-10)");
  cmd_verify->add_option("--work-dir", verify_work_dir, "scratch directory for acceptance runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 1;
  }

  try {
    resolve_enums(cfg, prompt_style, client, strategy, variant, kind, eval_mode, eval_source);

    if (cmd_verify->parsed()) {
      auto results = accept::run(verify_criteria, verify_work_dir);
      return accept::all_passed(results) ? 0 : 3;
    }
    if (cmd_synth->parsed() && !cfg.dataset_path.empty()) {
      throw ConfigError("synth generates data; drop --data.dataset or use ingest");
    }
    if (cmd_ingest->parsed() && cfg.dataset_path.empty()) {
      throw ConfigError("ingest needs --data.dataset and --data.corpus");
    }

    cfg.validate();
    Pipeline pipe(cfg);
    if (cmd_synth->parsed() || cmd_ingest->parsed()) {
      pipe.run_stage("data");
    } else if (cmd_index->parsed()) {
      pipe.run_stage("index");
    } else if (cmd_elicit->parsed()) {
      pipe.run_stage("elicit");
    } else if (cmd_warmup->parsed()) {
      pipe.run_stage("warmup");
    } else if (cmd_distill->parsed()) {
      pipe.run_stage("distill");
    } else if (cmd_teach->parsed()) {
      pipe.run_stage("teach");
    } else if (cmd_tailback->parsed()) {
      pipe.run_stage("tailback");
    } else if (cmd_finalize->parsed()) {
      pipe.run_stage("finalize");
    } else if (cmd_evaluate->parsed()) {
      pipe.run_stage("evaluate");
      auto report = MetricsReport::load(pipe.report_file());
      std::printf("accuracy %.4f (%ld/%ld) mode=%s source=%s -> %s\n", report.accuracy,
                  report.correct, report.total, report.mode.c_str(), report.source.c_str(),
                  pipe.report_file().c_str());
    } else if (cmd_sweep->parsed()) {
      auto result = sweep_statement_count(cfg, sweep_counts);
      std::printf("count,mean_accuracy\n");
      for (size_t i = 0; i < result.counts.size(); ++i) {
        std::printf("%d,%.4f\n", result.counts[i], result.mean_accuracy[i]);
      }
      std::printf("wrote %s and %s\n", result.csv_path.c_str(), result.svg_path.c_str());
    } else if (cmd_compare->parsed()) {
      auto result = compare_fusion_vs_voting(cfg);
      std::printf("fusion mean %.4f, voting mean %.4f -> %s\n", result.fusion_mean,
                  result.voting_mean, result.csv_path.c_str());
    } else if (cmd_pipeline->parsed()) {
      auto result = pipe.run();
      if (result.executed.empty()) {
        std::printf("pipeline up to date, nothing to run\n");
      } else {
        std::printf("executed stages:");
        for (const auto& s : result.executed) std::printf(" %s", s.c_str());
        std::printf("\n");
      }
      std::printf("report: %s\n", result.report_path.c_str());
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return 2;
  }
}
