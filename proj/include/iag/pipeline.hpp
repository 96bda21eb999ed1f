// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iag/bm25.hpp"
#include "iag/checkpoint.hpp"
#include "iag/completion.hpp"
#include "iag/config.hpp"
#include "iag/statement_cache.hpp"

namespace iag {

struct SplitSet {
  std::vector<QAExample> train, dev, test;
};

// Deterministic shuffled split by seed; fractions are train/dev, rest is test.
SplitSet split_dataset(const std::vector<QAExample>& all, double train_frac, double dev_frac,
                       std::uint64_t seed);

// Top-M retrieval for every question, keyed by qid.
std::map<std::string, std::vector<Document>> docs_map(const Bm25Index& index,
                                                      const std::vector<QAExample>& dataset,
                                                      int m_docs);

struct PredictionRow {
  std::string qid;
  Label prediction = Label::no;
  double log_prob_yes = 0.0;
  double log_prob_no = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  long correct = 0;
  long total = 0;
  std::vector<PredictionRow> predictions;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string mode;
  std::string source;
  double wall_clock_sec = 0.0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static MetricsReport load(const std::string& path);
};

// Everything except wall clock must match between two runs of one config+seed.
bool reports_equal(const MetricsReport& a, const MetricsReport& b);

// Accuracy of the generator over a dataset under the given evidence
// composition. statements_by_qid may be null only for retrieval_only; for the
// induction modes every qid must be covered or the error lists the gaps.
MetricsReport evaluate_dataset(
    const Seq2SeqModel& gen, const Vocab& vocab, const std::vector<QAExample>& dataset,
    const std::map<std::string, std::vector<Document>>& docs_by_qid, EvidenceMode mode,
    const std::map<std::string, std::vector<KnowledgeStatement>>* statements_by_qid,
    const std::string& config_hash, std::uint64_t seed);

struct PipelineResult {
  std::vector<std::string> executed;  // stage names run in this invocation
  std::string report_path;
};

// Stage orchestration over one config/seed. Artifacts live under
// cfg.out_dir; a manifest records per-stage config hashes so completed stages
// are skipped and any rerun stage re-executes its dependents.
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg);

  // Stage order for this config's pipeline kind.
  std::vector<std::string> stage_names() const;
  PipelineResult run();
  // Runs a single stage (and nothing else); dependencies must be satisfied.
  void run_stage(const std::string& name);

  // artifact paths
  std::string dataset_file() const;
  std::string corpus_file() const;
  std::string teacher_file() const;
  std::string splits_file() const;
  std::string vocab_file() const;
  std::string index_file() const;
  std::string statements_file() const;
  std::string warmup_ckpt() const;
  std::string distill_ckpt() const;
  std::string teach_ckpt() const;
  std::string tailback_ckpt() const;
  std::string final_ckpt() const;
  std::string report_file() const;
  std::string predictions_file() const;
  std::string manifest_file() const;

  const RunConfig& config() const { return cfg_; }

  // loaded-artifact helpers, shared with the ablation drivers
  Vocab load_vocab() const;
  SplitSet load_splits() const;
  std::map<std::string, std::vector<Document>> load_docs_map() const;
  std::map<std::string, std::vector<KnowledgeStatement>> eval_statements(
      const std::vector<QAExample>& dataset, int n) const;

 private:
  void stage_data();
  void stage_index();
  void stage_elicit();
  void stage_warmup();
  void stage_distill();
  void stage_teach();
  void stage_tailback();
  void stage_finalize();
  void stage_gpt_train();
  void stage_evaluate();

  bool artifacts_present(const std::string& stage) const;
  std::unique_ptr<CompletionClient> make_client() const;

  RunConfig cfg_;
};

// Statement-count sweep: re-evaluates a trained pipeline per count and seed.
// Writes CSV (count, mean accuracy, per-seed accuracies) and an SVG plot.
struct SweepResult {
  std::vector<int> counts;
  std::vector<double> mean_accuracy;
  std::vector<std::vector<double>> per_seed;  // [count][seed]
  std::string csv_path;
  std::string svg_path;
};

SweepResult sweep_statement_count(const RunConfig& cfg, const std::vector<int>& counts);

// Knowledge fusion vs self-consistency voting on identical statements.
struct CompareResult {
  std::vector<double> fusion_acc;  // per seed
  std::vector<double> voting_acc;
  double fusion_mean = 0.0;
  double voting_mean = 0.0;
  std::string csv_path;
};

CompareResult compare_fusion_vs_voting(const RunConfig& cfg);

// Minimal polyline SVG used for the sweep plot.
void write_line_plot_svg(const std::string& path, const std::vector<double>& xs,
                         const std::vector<double>& ys, const std::string& x_label,
                         const std::string& y_label);

}  // namespace iag
