// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "iag/distill.hpp"
#include "iag/generator.hpp"
#include "iag/prompt.hpp"
#include "iag/synth.hpp"
#include "iag/tailback.hpp"
#include "iag/train.hpp"

namespace iag {

enum class ClientKind { mock, http, fixture };
enum class EvalSource { teacher_cache, student, none };
enum class PipelineKind { student, gpt, retrieval };

const char* to_string(ClientKind k);
const char* to_string(EvalSource s);
const char* to_string(PipelineKind k);
ClientKind client_kind_from_string(const std::string& s);
EvalSource eval_source_from_string(const std::string& s);
PipelineKind pipeline_kind_from_string(const std::string& s);

// Fully resolved experiment configuration. Every run artifact embeds hash().
struct RunConfig {
  // paths
  std::string out_dir = "runs/exp";
  std::string dataset_path;  // external data; empty = generate synthetically
  std::string corpus_path;
  std::string teacher_path;
  std::string fixture_path;

  SynthSpec synth;

  double train_frac = 0.70;
  double dev_frac = 0.15;

  // retriever
  int m_docs = 5;
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;

  // induction
  int n_statements = 5;
  int n_cache = 0;  // cached samples per question; 0 = max(n_statements, 9)
  double temperature = 0.7;
  PromptStyle prompt_style = PromptStyle::inductive;
  ClientKind client = ClientKind::mock;
  double mock_noise = 0.0;
  std::string endpoint;
  std::string token_env = "IAG_COMPLETION_TOKEN";
  int max_tokens = 64;
  int max_statement_len = 24;

  // model hyperparameters, shared by generator and inductor
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 0;
  int max_len = 64;

  // per-stage optimization
  TrainConfig warmup_train{.epochs = 1, .lr = 3e-4, .warmup_steps = 100, .batch_size = 1};
  TrainConfig distill_train_cfg{.epochs = 3, .lr = 3e-4, .warmup_steps = 100, .batch_size = 1};
  TrainConfig finalize_train{.epochs = 2, .lr = 3e-4, .warmup_steps = 100, .batch_size = 1};
  long tailback_iterations = 300;
  double tailback_lr = 3e-4;
  long tailback_eval_every = 0;

  DistillStrategy strategy = DistillStrategy::q_weight;
  TailbackVariant variant = TailbackVariant::eq6;
  bool use_tailback = true;  // false = finalize straight after distillation

  PipelineKind kind = PipelineKind::student;
  EvidenceMode eval_mode = EvidenceMode::both;
  EvalSource eval_source = EvalSource::student;

  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  ModelConfig model_config(int vocab_size) const;
  int cache_samples() const { return n_cache > 0 ? n_cache : std::max(n_statements, 9); }
  void validate() const;

  nlohmann::json to_json() const;
  // Stable hash over the full resolved configuration.
  std::string hash() const;

  // Copy with the seed replaced and a per-seed output directory.
  RunConfig with_seed(std::uint64_t s) const;
};

}  // namespace iag
