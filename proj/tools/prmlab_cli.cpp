// Command-line front end: data generation, annotation, training, search,
// similarity reports, and full experiment runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "prmlab/annotate.hpp"
#include "prmlab/core.hpp"
#include "prmlab/env.hpp"
#include "prmlab/harness.hpp"
#include "prmlab/prm.hpp"
#include "prmlab/rng.hpp"
#include "prmlab/search.hpp"
#include "prmlab/similarity.hpp"

using namespace prmlab;

namespace {

std::vector<TrainSample> samples_from_labels(
    const std::vector<Problem>& problems, const std::vector<ReasoningTrace>& traces,
    const std::vector<StepLabel>& labels, const Featurizer& featurizer) {
  std::map<std::string, const Problem*> problem_by_id;
  for (const auto& p : problems) problem_by_id[p.id] = &p;
  std::map<std::string, const ReasoningTrace*> trace_by_id;
  for (const auto& t : traces) trace_by_id[t.trace_id()] = &t;

  std::vector<TrainSample> samples;
  samples.reserve(labels.size());
  for (const auto& label : labels) {
    auto ti = trace_by_id.find(label.trace_id);
    if (ti == trace_by_id.end())
      throw std::runtime_error("label references unknown trace " + label.trace_id);
    const ReasoningTrace& trace = *ti->second;
    auto pi = problem_by_id.find(trace.problem_id);
    if (pi == problem_by_id.end())
      throw std::runtime_error("trace references unknown problem " + trace.problem_id);
    if (label.step_index >= static_cast<int>(trace.steps.size()))
      throw std::runtime_error("label step index out of range for " + label.trace_id);
    ReasoningTrace prefix;
    prefix.problem_id = trace.problem_id;
    prefix.generator_seed = trace.generator_seed;
    prefix.steps.assign(trace.steps.begin(), trace.steps.begin() + label.step_index);
    TrainSample s;
    s.features = featurizer(*pi->second, prefix, trace.steps[label.step_index]);
    s.label = label.hard_label;
    samples.push_back(s);
  }
  return samples;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"process-reward scoring and guided-search toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int workers = 1;
  std::string out_dir = "out";
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--workers", workers, "worker pool size")->capture_default_str();
  app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();

  // ---- gen-data
  auto* gen = app.add_subcommand("gen-data", "generate problems and rollout traces");
  std::string gen_domain = "math_chain";
  int gen_count = 100, gen_min_steps = 4, gen_max_steps = 8, gen_per_problem = 0;
  std::string gen_problems_out = "problems.jsonl", gen_traces_out;
  double gen_eps = 0.2, gen_rho = 0.1;
  gen->add_option("--domain", gen_domain)->capture_default_str();
  gen->add_option("--count", gen_count)->capture_default_str();
  gen->add_option("--min-steps", gen_min_steps)->capture_default_str();
  gen->add_option("--max-steps", gen_max_steps)->capture_default_str();
  gen->add_option("--out", gen_problems_out, "problems jsonl path")->capture_default_str();
  gen->add_option("--traces-out", gen_traces_out, "also roll out traces to this path");
  gen->add_option("--per-problem", gen_per_problem, "traces per problem");
  gen->add_option("--error-rate", gen_eps)->capture_default_str();
  gen->add_option("--recovery-rate", gen_rho)->capture_default_str();

  // ---- annotate
  auto* ann = app.add_subcommand("annotate", "step-level annotation of traces");
  std::string ann_problems, ann_traces, ann_out = "labels.jsonl";
  int ann_k = 16, ann_m = 3;
  double ann_tau = 0.5;
  ann->add_option("--problems", ann_problems)->required();
  ann->add_option("--traces", ann_traces)->required();
  ann->add_option("--out", ann_out)->capture_default_str();
  ann->add_option("--k", ann_k)->capture_default_str();
  ann->add_option("--tau", ann_tau)->capture_default_str();
  ann->add_option("--ensemble", ann_m)->capture_default_str();

  // ---- train-prm
  auto* tr = app.add_subcommand("train-prm", "train a step scorer from labels");
  std::string tr_problems, tr_traces, tr_labels, tr_out = "model.json";
  double tr_sigma = 0.25;
  int tr_hidden = 16;
  tr->add_option("--problems", tr_problems)->required();
  tr->add_option("--traces", tr_traces)->required();
  tr->add_option("--labels", tr_labels)->required();
  tr->add_option("--out", tr_out)->capture_default_str();
  tr->add_option("--sigma", tr_sigma)->capture_default_str();
  tr->add_option("--hidden-dim", tr_hidden)->capture_default_str();

  // ---- search
  auto* se = app.add_subcommand("search", "guided search over a problem set");
  std::string se_strategy = "best_of_n", se_model, se_problems, se_out = "runs.jsonl";
  std::string se_agg = "prm_min";
  std::uint64_t se_budget = 128;
  double se_eps = 0.2, se_rho = 0.1, se_sigma = 0.25;
  se->add_option("--strategy", se_strategy)->capture_default_str();
  se->add_option("--model", se_model)->required();
  se->add_option("--problems", se_problems)->required();
  se->add_option("--budget", se_budget, "generation units per problem")->capture_default_str();
  se->add_option("--out", se_out)->capture_default_str();
  se->add_option("--aggregation", se_agg)->capture_default_str();
  se->add_option("--error-rate", se_eps)->capture_default_str();
  se->add_option("--recovery-rate", se_rho)->capture_default_str();
  se->add_option("--sigma", se_sigma)->capture_default_str();

  // ---- run-matrix
  auto* mx = app.add_subcommand("run-matrix", "strategy x budget accuracy matrix");
  std::string mx_config, mx_model, mx_out = "results.csv";
  mx->add_option("--config", mx_config)->required();
  mx->add_option("--model", mx_model, "trained model json")->required();
  mx->add_option("--out", mx_out)->capture_default_str();

  // ---- similarity
  auto* si = app.add_subcommand("similarity", "activation-pattern similarity report");
  std::string si_model, si_problems, si_a, si_b, si_out = "report.json";
  double si_sigma = 0.25;
  si->add_option("--model", si_model)->required();
  si->add_option("--problems", si_problems)->required();
  si->add_option("--set-a", si_a)->required();
  si->add_option("--set-b", si_b)->required();
  si->add_option("--out", si_out)->capture_default_str();
  si->add_option("--sigma", si_sigma)->capture_default_str();

  // ---- run-experiment
  auto* ex = app.add_subcommand("run-experiment", "end-to-end pipeline from a config");
  std::string ex_config;
  ex->add_option("--config", ex_config)->required();

  // ---- emit-curves
  auto* cu = app.add_subcommand("emit-curves", "per-strategy curve files from results.csv");
  std::string cu_results;
  cu->add_option("--results", cu_results)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      EnvParams env;
      env.min_steps = gen_min_steps;
      env.max_steps = gen_max_steps;
      auto problems = generate_problems(parse_domain(gen_domain), gen_count, seed, env);
      write_problems(gen_problems_out, problems);
      std::cout << "wrote " << problems.size() << " problems to " << gen_problems_out << "\n";
      if (!gen_traces_out.empty() && gen_per_problem > 0) {
        StochasticPolicy policy{gen_eps, gen_rho, 1.0, 0};
        auto traces = generate_traces(problems, policy, gen_per_problem,
                                      derive_seed(seed, "gen-traces"), workers);
        write_traces(gen_traces_out, traces);
        std::cout << "wrote " << traces.size() << " traces to " << gen_traces_out << "\n";
      }
    } else if (*ann) {
      auto problems = read_problems(ann_problems);
      auto traces = read_traces(ann_traces);
      AnnotationParams params;
      params.k = ann_k;
      params.tau = ann_tau;
      params.ensemble = ann_m;
      params.seed = derive_seed(seed, "annotate");
      params.workers = workers;
      Featurizer featurizer{0.25, derive_seed(seed, "features")};
      LabeledData data =
          annotate_corpus(problems, traces, params, featurizer, ann_m > 1);
      write_labels(ann_out, data.labels);
      std::cout << "retained " << data.filter_stats.retained << "/"
                << data.filter_stats.groups << " traces, wrote "
                << data.labels.size() << " labels to " << ann_out << "\n";
    } else if (*tr) {
      auto problems = read_problems(tr_problems);
      auto traces = read_traces(tr_traces);
      auto labels = read_labels(tr_labels);
      Featurizer featurizer{tr_sigma, derive_seed(seed, "features")};
      auto samples = samples_from_labels(problems, traces, labels, featurizer);
      TrainConfig tc;
      tc.seed = derive_seed(seed, "train");
      tc.hidden_dim = tr_hidden;
      PrmModel model = train(samples, tc);
      save_model(tr_out, model);
      std::cout << "trained on " << samples.size() << " samples, val BCE "
                << model.meta.final_val_loss << ", wrote " << tr_out << "\n";
    } else if (*se) {
      auto problems = read_problems(se_problems);
      PrmModel model = load_model(se_model);
      Featurizer featurizer{se_sigma, derive_seed(seed, "features")};
      MatrixParams params;
      params.policy = {se_eps, se_rho, 1.0, 0};
      params.aggregation = parse_aggregation(se_agg);
      params.seed = derive_seed(seed, "search");
      std::size_t typical = 0;
      for (const auto& p : problems) typical += p.num_steps();
      typical = std::max<std::size_t>(1, typical / problems.size());
      SearchConfig cfg = cell_config(parse_strategy(se_strategy), se_budget,
                                     typical, params);
      std::vector<SearchRun> runs(problems.size());
      std::size_t hits = 0;
      for (std::size_t i = 0; i < problems.size(); ++i) {
        runs[i] = run_strategy(problems[i], params.policy, model, cfg, featurizer);
        hits += runs[i].correct ? 1 : 0;
      }
      write_runs(se_out, runs);
      std::cout << "accuracy " << static_cast<double>(hits) / problems.size()
                << " over " << problems.size() << " problems, wrote " << se_out << "\n";
    } else if (*mx) {
      ExperimentConfig cfg = parse_config_file(mx_config);
      PrmModel model = load_model(mx_model);
      Featurizer featurizer{cfg.feature_sigma, derive_seed(cfg.seed, "features")};
      auto problems = generate_problems(cfg.domain, cfg.eval_problems,
                                        derive_seed(cfg.seed, "eval-problems"),
                                        cfg.env);
      MatrixParams mp;
      mp.strategies = cfg.strategies;
      mp.budgets = cfg.budgets;
      mp.wall_clock_caps_ns = cfg.wall_clock_caps_ns;
      mp.policy = cfg.policy;
      mp.aggregation = cfg.aggregation;
      mp.seed = derive_seed(cfg.seed, "matrix");
      mp.workers = workers;
      auto rows = run_matrix(problems, model, featurizer, mp);
      std::ofstream out(mx_out, std::ios::binary);
      out << "strategy,budget_units,n_problems,accuracy,se,wall_clock_ms\n";
      for (const auto& r : rows) {
        char acc[32], sev[32], ms[32];
        std::snprintf(acc, sizeof acc, "%.6f", r.accuracy);
        std::snprintf(sev, sizeof sev, "%.6f", r.se);
        std::snprintf(ms, sizeof ms, "%.3f", r.wall_clock_ms);
        out << r.strategy << ',' << r.budget_units << ',' << r.n_problems << ','
            << acc << ',' << sev << ',' << ms << '\n';
      }
      std::cout << "wrote " << rows.size() << " rows to " << mx_out << "\n";
    } else if (*si) {
      auto problems = read_problems(si_problems);
      PrmModel model = load_model(si_model);
      Featurizer featurizer{si_sigma, derive_seed(seed, "features")};
      auto set_a = activations_for(model, problems, read_traces(si_a), featurizer);
      auto set_b = activations_for(model, problems, read_traces(si_b), featurizer);
      SimilarityReport report = set_similarity(set_a, set_b);
      nlohmann::json j;
      j["set_a"] = si_a;
      j["set_b"] = si_b;
      j["sum_similarity"] = report.sum_similarity;
      j["mean_similarity"] = report.mean_similarity;
      j["excluded_pairs"] = report.excluded_pairs;
      j["pairwise"] = report.pairwise;
      std::ofstream out(si_out, std::ios::binary);
      out << j.dump(2) << '\n';
      std::cout << "mean similarity " << report.mean_similarity << ", wrote "
                << si_out << "\n";
    } else if (*ex) {
      ExperimentConfig cfg = parse_config_file(ex_config);
      if (app.count("--seed")) cfg.seed = seed;
      if (app.count("--workers")) cfg.workers = workers;
      if (app.count("--out-dir")) cfg.out_dir = out_dir;
      ExperimentResult result = run_experiment(cfg);
      std::cout << "experiment complete; results at " << result.results_csv_path
                << "; checks " << (result.checks_passed ? "PASS" : "FAIL") << "\n";
      return result.checks_passed ? 0 : 1;
    } else if (*cu) {
      auto emitted = emit_curves(cu_results, out_dir);
      std::cout << "emitted " << emitted.size() << " curve files\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
