// SPDX-License-Identifier: Apache-2.0
#include "iag/config.hpp"

namespace iag {

using nlohmann::json;

const char* to_string(ClientKind k) {
  switch (k) {
    case ClientKind::mock: return "mock";
    case ClientKind::http: return "http";
    case ClientKind::fixture: return "fixture";
  }
  return "?";
}

const char* to_string(EvalSource s) {
  switch (s) {
    case EvalSource::teacher_cache: return "teacher_cache";
    case EvalSource::student: return "student";
    case EvalSource::none: return "none";
  }
  return "?";
}

const char* to_string(PipelineKind k) {
  switch (k) {
    case PipelineKind::student: return "student";
    case PipelineKind::gpt: return "gpt";
    case PipelineKind::retrieval: return "retrieval";
  }
  return "?";
}

ClientKind client_kind_from_string(const std::string& s) {
  if (s == "mock") return ClientKind::mock;
  if (s == "http") return ClientKind::http;
  if (s == "fixture") return ClientKind::fixture;
  throw ConfigError("unknown client kind: " + s);
}

EvalSource eval_source_from_string(const std::string& s) {
  if (s == "teacher_cache") return EvalSource::teacher_cache;
  if (s == "student") return EvalSource::student;
  if (s == "none") return EvalSource::none;
  throw ConfigError("unknown eval source: " + s);
}

PipelineKind pipeline_kind_from_string(const std::string& s) {
  if (s == "student") return PipelineKind::student;
  if (s == "gpt") return PipelineKind::gpt;
  if (s == "retrieval") return PipelineKind::retrieval;
  throw ConfigError("unknown pipeline kind: " + s);
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.d_model = d_model;
  mc.n_layers = n_layers;
  mc.n_heads = n_heads;
  mc.d_ff = d_ff;
  mc.max_len = max_len;
  return mc;
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("config: out_dir must be set");
  if (m_docs < 0 || n_statements < 0) throw ConfigError("config: M and N must be >= 0");
  if (m_docs + n_statements < 1) throw ConfigError("config: M + N must be >= 1");
  if (train_frac <= 0 || dev_frac < 0 || train_frac + dev_frac >= 1.0) {
    throw ConfigError("config: invalid split fractions");
  }
  if (temperature < 0) throw ConfigError("config: temperature must be >= 0");
  if (mock_noise < 0 || mock_noise > 1) throw ConfigError("config: mock_noise must be in [0,1]");
  if (client == ClientKind::http && endpoint.empty()) {
    throw ConfigError("config: http client needs an endpoint");
  }
  if (client == ClientKind::fixture && fixture_path.empty()) {
    throw ConfigError("config: fixture client needs a fixture path");
  }
  if (dataset_path.empty() != corpus_path.empty()) {
    throw ConfigError("config: dataset_path and corpus_path must be set together");
  }
  if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
  synth.validate();
}

namespace {

json train_cfg_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["iters"] = t.iters;
  j["lr"] = t.lr;
  j["warmup_steps"] = t.warmup_steps;
  j["batch_size"] = t.batch_size;
  return j;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["out_dir"] = out_dir;
  j["dataset_path"] = dataset_path;
  j["corpus_path"] = corpus_path;
  j["teacher_path"] = teacher_path;
  j["fixture_path"] = fixture_path;
  j["synth"] = {{"n_entities", synth.n_entities},
                {"n_hypernyms", synth.n_hypernyms},
                {"analogs_per_entity", synth.analogs_per_entity},
                {"n_properties", synth.n_properties},
                {"distractor_docs", synth.distractor_docs},
                {"gold_doc_rate", synth.gold_doc_rate},
                {"teacher_noise_rate", synth.teacher_noise_rate},
                {"seed", synth.seed}};
  j["train_frac"] = train_frac;
  j["dev_frac"] = dev_frac;
  j["m_docs"] = m_docs;
  j["bm25_k1"] = bm25_k1;
  j["bm25_b"] = bm25_b;
  j["n_statements"] = n_statements;
  j["n_cache"] = cache_samples();
  j["temperature"] = temperature;
  j["prompt_style"] = prompt_style == PromptStyle::inductive ? "inductive" : "trivial";
  j["client"] = to_string(client);
  j["mock_noise"] = mock_noise;
  j["endpoint"] = endpoint;
  j["token_env"] = token_env;  // variable name only; the token itself is never persisted
  j["max_tokens"] = max_tokens;
  j["max_statement_len"] = max_statement_len;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_len"] = max_len;
  j["warmup_train"] = train_cfg_json(warmup_train);
  j["distill_train"] = train_cfg_json(distill_train_cfg);
  j["finalize_train"] = train_cfg_json(finalize_train);
  j["tailback_iterations"] = tailback_iterations;
  j["tailback_lr"] = tailback_lr;
  j["tailback_eval_every"] = tailback_eval_every;
  j["strategy"] = to_string(strategy);
  j["variant"] = to_string(variant);
  j["use_tailback"] = use_tailback;
  j["kind"] = to_string(kind);
  j["eval_mode"] = to_string(eval_mode);
  j["eval_source"] = to_string(eval_source);
  j["seed"] = seed;
  j["seeds"] = seeds;
  return j;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");  // the same experiment may live anywhere on disk
  return hex64(fnv1a(j.dump()));
}

RunConfig RunConfig::with_seed(std::uint64_t s) const {
  RunConfig c = *this;
  c.seed = s;
  c.synth.seed = s;
  c.out_dir = out_dir + "/seed_" + std::to_string(s);
  return c;
}

}  // namespace iag
