#pragma once

/**
 * Experiment orchestration: config parsing, seeded end-to-end pipelines
 * (generate -> annotate -> filter -> train -> search -> report), candidate
 * metrics (prm@N / maj@N / pass@N), and CSV/JSON reporting.
 *
 * Pipeline stages run sequentially; per-problem work inside a stage fans out
 * over a worker pool. Outputs are byte-deterministic for a fixed (config,
 * seed) regardless of worker count: measured timings go to a sidecar file,
 * never into results.csv.
 */

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prmlab/annotate.hpp"
#include "prmlab/core.hpp"
#include "prmlab/env.hpp"
#include "prmlab/prm.hpp"
#include "prmlab/search.hpp"

namespace prmlab {

// ---------------------------------------------------------------------------
// Config: flat dotted keys, one `key = value` per line, '#' comments.
// Unknown keys are rejected.

struct ExperimentConfig {
  Domain domain = Domain::MathChain;
  EnvParams env;
  StochasticPolicy policy{0.2, 0.1, 1.0, 0};
  double feature_sigma = 0.25;

  int annotate_k = 16;
  double annotate_tau = 0.5;
  int ensemble_m = 3;
  HardLabelRule hard_label_rule = HardLabelRule::AnySuccess;
  std::vector<double> ensemble_error_rates{0.05, 0.1, 0.2};

  TrainConfig train;

  std::vector<Strategy> strategies{Strategy::BestOfN, Strategy::Beam,
                                   Strategy::Mcts, Strategy::MajorityVote};
  std::vector<std::uint64_t> budgets{16, 64};
  std::vector<std::uint64_t> wall_clock_caps_ns;  // optional matrix cells
  std::vector<int> metric_ns{1, 2, 4, 8};
  AggregationRule aggregation = AggregationRule::PrmMin;

  int train_problems = 100;
  int eval_problems = 100;
  int traces_per_problem = 8;
  std::vector<int> hidden_dim_sweep;  // optional accuracy-vs-H report

  std::uint64_t seed = 0;
  int workers = 1;
  std::string out_dir = "out";
};

ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// ---------------------------------------------------------------------------
// Metrics over per-problem candidate pools. Candidates are generated once at
// max N and prefix-subset for smaller N, so metric curves are nested.

struct CandidateSet {
  std::string problem_id;
  std::string gold_answer;
  std::vector<ScoredCandidate> candidates;
};

struct MetricRow {
  std::string metric;  // prm@N / maj@N / pass@N
  int n = 1;
  double accuracy = 0.0;
  double se = 0.0;
  std::size_t n_problems = 0;
  std::string aggregation;
};

std::vector<MetricRow> compute_metrics(const std::vector<CandidateSet>& sets,
                                       const std::vector<int>& ns);

// ---------------------------------------------------------------------------
// Pipeline pieces (also used standalone by the CLI)

std::vector<ReasoningTrace> generate_traces(const std::vector<Problem>& problems,
                                            const StochasticPolicy& policy,
                                            int per_problem, std::uint64_t seed,
                                            int workers = 1);

struct AnnotationParams {
  int k = 16;
  double tau = 0.5;
  int ensemble = 3;
  HardLabelRule rule = HardLabelRule::AnySuccess;
  std::vector<double> ensemble_error_rates{0.05, 0.1, 0.2};
  std::uint64_t seed = 0;
  int workers = 1;
};

struct LabeledData {
  std::vector<StepLabel> labels;
  std::vector<TrainSample> samples;
  FilterStats filter_stats;
  std::size_t discarded_inconsistent = 0;
};

// ensemble_mode=false annotates with the first error rate only and skips
// consensus filtering. max_samples, when nonzero, truncates the sample list
// so differently-filtered datasets can be compared at a matched label budget.
LabeledData annotate_corpus(const std::vector<Problem>& problems,
                            const std::vector<ReasoningTrace>& traces,
                            const AnnotationParams& params,
                            const Featurizer& featurizer, bool ensemble_mode,
                            std::size_t max_samples = 0);

// per-problem candidate pools from one best-of-N run each
std::vector<CandidateSet> candidate_pools(const std::vector<Problem>& problems,
                                          const StochasticPolicy& policy,
                                          const PrmModel& model,
                                          const Featurizer& featurizer, int n,
                                          AggregationRule aggregation,
                                          std::uint64_t seed, int workers = 1,
                                          std::vector<SearchRun>* runs_out = nullptr);

void write_runs(const std::string& path, const std::vector<SearchRun>& runs);

// ---------------------------------------------------------------------------

struct ExperimentResult {
  bool checks_passed = false;
  std::vector<MetricRow> metric_rows;
  std::vector<MatrixRow> matrix_rows;
  PrmModel model;
  std::string results_csv_path;
};

// Emits results.csv, runs.jsonl, model.json, labels.jsonl, report.md (plus
// timings.csv) under config.out_dir. Deterministic given the master seed.
ExperimentResult run_experiment(const ExperimentConfig& config);

// One curve file per strategy/metric family from a results.csv, plus an SVG.
// Returns the emitted paths.
std::vector<std::string> emit_curves(const std::string& results_csv,
                                     const std::string& out_dir);

}  // namespace prmlab
