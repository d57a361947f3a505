#include "prmlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "prmlab/rng.hpp"
#include "prmlab/similarity.hpp"

namespace prmlab {

using nlohmann::json;

namespace {

template <typename Fn>
void parallel_indexed(std::size_t n, int workers, Fn fn) {
  workers = std::max(1, workers);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&]() {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  using Setter = std::function<void(const std::string&)>;
  std::map<std::string, Setter> setters;

  auto num = [](const std::string& v) { return std::stod(v); };
  auto list_u64 = [&](const std::string& v) {
    std::vector<std::uint64_t> out;
    for (auto& tok : split(v, ',')) {
      if (!trim(tok).empty()) out.push_back(std::stoull(trim(tok)));
    }
    return out;
  };

  setters["domain"] = [&](const std::string& v) { cfg.domain = parse_domain(v); };
  setters["seed"] = [&](const std::string& v) { cfg.seed = std::stoull(v); };
  setters["workers"] = [&](const std::string& v) { cfg.workers = std::stoi(v); };
  setters["out_dir"] = [&](const std::string& v) { cfg.out_dir = v; };
  setters["env.min_steps"] = [&](const std::string& v) { cfg.env.min_steps = std::stoi(v); };
  setters["env.max_steps"] = [&](const std::string& v) { cfg.env.max_steps = std::stoi(v); };
  setters["env.alphabet_size"] = [&](const std::string& v) { cfg.env.alphabet_size = std::stoi(v); };
  setters["env.distractors_per_position"] = [&](const std::string& v) {
    cfg.env.distractors_per_position = std::stoi(v);
  };
  setters["policy.error_rate"] = [&](const std::string& v) { cfg.policy.error_rate = num(v); };
  setters["policy.recovery_rate"] = [&](const std::string& v) { cfg.policy.recovery_rate = num(v); };
  setters["policy.spread"] = [&](const std::string& v) { cfg.policy.spread = num(v); };
  setters["features.sigma"] = [&](const std::string& v) { cfg.feature_sigma = num(v); };
  setters["annotate.k"] = [&](const std::string& v) { cfg.annotate_k = std::stoi(v); };
  setters["annotate.tau"] = [&](const std::string& v) { cfg.annotate_tau = num(v); };
  setters["annotate.ensemble"] = [&](const std::string& v) { cfg.ensemble_m = std::stoi(v); };
  setters["annotate.rule"] = [&](const std::string& v) {
    if (v == "any_success") cfg.hard_label_rule = HardLabelRule::AnySuccess;
    else if (v == "threshold_tau") cfg.hard_label_rule = HardLabelRule::ThresholdTau;
    else throw std::invalid_argument("unknown annotate.rule: " + v);
  };
  setters["annotate.ensemble_error_rates"] = [&](const std::string& v) {
    cfg.ensemble_error_rates.clear();
    for (auto& tok : split(v, ',')) cfg.ensemble_error_rates.push_back(num(trim(tok)));
  };
  setters["train.learning_rate"] = [&](const std::string& v) { cfg.train.learning_rate = num(v); };
  setters["train.weight_decay"] = [&](const std::string& v) { cfg.train.weight_decay = num(v); };
  setters["train.batch_size"] = [&](const std::string& v) { cfg.train.batch_size = std::stoi(v); };
  setters["train.max_epochs"] = [&](const std::string& v) { cfg.train.max_epochs = std::stoi(v); };
  setters["train.early_stop_patience"] = [&](const std::string& v) {
    cfg.train.early_stop_patience = std::stoi(v);
  };
  setters["train.validation_fraction"] = [&](const std::string& v) {
    cfg.train.validation_fraction = num(v);
  };
  setters["train.hidden_dim"] = [&](const std::string& v) { cfg.train.hidden_dim = std::stoi(v); };
  setters["train.downsample_positive"] = [&](const std::string& v) {
    cfg.train.downsample_positive = v == "true" || v == "1";
  };
  setters["search.strategies"] = [&](const std::string& v) {
    cfg.strategies.clear();
    for (auto& tok : split(v, ',')) cfg.strategies.push_back(parse_strategy(trim(tok)));
  };
  setters["search.budgets"] = [&](const std::string& v) { cfg.budgets = list_u64(v); };
  setters["search.wall_clock_caps_ms"] = [&](const std::string& v) {
    cfg.wall_clock_caps_ns.clear();
    for (auto u : list_u64(v)) cfg.wall_clock_caps_ns.push_back(u * 1000000ULL);
  };
  setters["search.metric_ns"] = [&](const std::string& v) {
    cfg.metric_ns.clear();
    for (auto& tok : split(v, ',')) cfg.metric_ns.push_back(std::stoi(trim(tok)));
  };
  setters["search.aggregation"] = [&](const std::string& v) {
    cfg.aggregation = parse_aggregation(v);
  };
  setters["data.train_problems"] = [&](const std::string& v) { cfg.train_problems = std::stoi(v); };
  setters["data.eval_problems"] = [&](const std::string& v) { cfg.eval_problems = std::stoi(v); };
  setters["data.traces_per_problem"] = [&](const std::string& v) {
    cfg.traces_per_problem = std::stoi(v);
  };
  setters["report.hidden_dim_sweep"] = [&](const std::string& v) {
    cfg.hidden_dim_sweep.clear();
    for (auto& tok : split(v, ',')) cfg.hidden_dim_sweep.push_back(std::stoi(trim(tok)));
  };

  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": unknown key '" + key + "'");
    }
    it->second(value);
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Metrics

std::vector<MetricRow> compute_metrics(const std::vector<CandidateSet>& sets,
                                       const std::vector<int>& ns) {
  if (sets.empty()) throw std::invalid_argument("compute_metrics: no candidate sets");
  int max_n = 0;
  for (int n : ns) max_n = std::max(max_n, n);
  for (const auto& s : sets) {
    if (static_cast<int>(s.candidates.size()) < max_n) {
      throw std::invalid_argument("compute_metrics: problem " + s.problem_id +
                                  " has " + std::to_string(s.candidates.size()) +
                                  " candidates, need " + std::to_string(max_n));
    }
  }

  std::vector<MetricRow> rows;
  auto push = [&](const std::string& metric, int n, std::size_t hits) {
    double acc = static_cast<double>(hits) / static_cast<double>(sets.size());
    double se = std::sqrt(acc * (1.0 - acc) / static_cast<double>(sets.size()));
    rows.push_back({metric, n, acc, se, sets.size(), ""});
  };

  for (int n : ns) {
    std::size_t prm_hits = 0, maj_hits = 0, pass_hits = 0;
    for (const auto& s : sets) {
      bool any = false;
      std::size_t best = 0;
      for (int i = 0; i < n; ++i) {
        const auto& c = s.candidates[i];
        any = any || *c.trace.final_answer == s.gold_answer;
        if (c.score > s.candidates[best].score) best = i;
      }
      pass_hits += any ? 1 : 0;
      prm_hits += *s.candidates[best].trace.final_answer == s.gold_answer ? 1 : 0;

      // mode with mean-score then first-occurrence tie-breaking
      struct Tally {
        int count = 0;
        double score_sum = 0.0;
        int first = 0;
      };
      std::map<std::string, Tally> tallies;
      for (int i = 0; i < n; ++i) {
        auto [it, inserted] = tallies.try_emplace(*s.candidates[i].trace.final_answer);
        if (inserted) it->second.first = i;
        it->second.count += 1;
        it->second.score_sum += s.candidates[i].score;
      }
      const Tally* mode = nullptr;
      std::string mode_answer;
      for (const auto& [answer, t] : tallies) {
        bool wins = !mode || t.count > mode->count;
        if (!wins && t.count == mode->count) {
          double mn = t.score_sum / t.count, mb = mode->score_sum / mode->count;
          wins = mn > mb || (mn == mb && t.first < mode->first);
        }
        if (wins) {
          mode = &t;
          mode_answer = answer;
        }
      }
      maj_hits += mode_answer == s.gold_answer ? 1 : 0;
    }
    push("prm@N", n, prm_hits);
    push("maj@N", n, maj_hits);
    push("pass@N", n, pass_hits);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Pipeline pieces

std::vector<ReasoningTrace> generate_traces(const std::vector<Problem>& problems,
                                            const StochasticPolicy& policy,
                                            int per_problem, std::uint64_t seed,
                                            int workers) {
  std::vector<ReasoningTrace> traces(problems.size() * per_problem);
  parallel_indexed(problems.size(), workers, [&](std::size_t i) {
    for (int r = 0; r < per_problem; ++r) {
      StochasticPolicy p = policy.with_seed(
          derive_seed(seed, problems[i].id, static_cast<std::uint64_t>(r)));
      ReasoningTrace empty;
      empty.problem_id = problems[i].id;
      empty.generator_seed = p.rng_seed;
      traces[i * per_problem + r] = rollout(p, problems[i], empty);
    }
  });
  return traces;
}

LabeledData annotate_corpus(const std::vector<Problem>& problems,
                            const std::vector<ReasoningTrace>& traces,
                            const AnnotationParams& params,
                            const Featurizer& featurizer, bool ensemble_mode,
                            std::size_t max_samples) {
  std::map<std::string, const Problem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;

  int m = ensemble_mode ? params.ensemble : 1;
  if (params.ensemble_error_rates.empty())
    throw std::invalid_argument("annotate_corpus: no ensemble error rates");

  // per-trace slots keep output deterministic under any worker count
  std::vector<std::vector<AnnotatedTrace>> slots(traces.size());
  std::vector<char> discarded(traces.size(), 0);
  parallel_indexed(traces.size(), params.workers, [&](std::size_t i) {
    const Problem& problem = *by_id.at(traces[i].problem_id);
    for (int a = 0; a < m; ++a) {
      RolloutOracleConfig oracle;
      oracle.k = params.k;
      oracle.tau = params.tau;
      oracle.hard_label_rule = params.rule;
      oracle.annotator_id = "a" + std::to_string(a);
      oracle.rollout_policy.error_rate =
          params.ensemble_error_rates[a % params.ensemble_error_rates.size()];
      oracle.rollout_policy.recovery_rate = 0.0;
      oracle.rollout_policy.rng_seed = derive_seed(
          params.seed, traces[i].trace_id(), static_cast<std::uint64_t>(a));
      try {
        slots[i].push_back(annotate_trace(problem, traces[i], oracle));
      } catch (const InconsistentOracleError&) {
        discarded[i] = 1;
        slots[i].clear();
        return;
      }
    }
  });

  std::vector<AnnotatedTrace> flat;
  LabeledData out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (discarded[i]) {
      ++out.discarded_inconsistent;
      continue;
    }
    for (auto& a : slots[i]) flat.push_back(std::move(a));
  }

  std::vector<AnnotatedTrace> kept;
  if (ensemble_mode) {
    kept = ensemble_filter(flat, m, &out.filter_stats);
  } else {
    kept = std::move(flat);
    out.filter_stats.groups = kept.size();
    out.filter_stats.retained = kept.size();
  }

  for (const auto& ann : kept) {
    const Problem& problem = *by_id.at(ann.trace.problem_id);
    ReasoningTrace prefix;
    prefix.problem_id = ann.trace.problem_id;
    prefix.generator_seed = ann.trace.generator_seed;
    for (const auto& label : ann.labels) {
      const Step& step = ann.trace.steps[label.step_index];
      TrainSample sample;
      sample.features = featurizer(problem, prefix, step);
      sample.label = label.hard_label;
      out.samples.push_back(sample);
      out.labels.push_back(label);
      prefix.steps.push_back(step);
    }
  }
  if (max_samples > 0 && out.samples.size() > max_samples) {
    out.samples.resize(max_samples);
    out.labels.resize(max_samples);
  }
  return out;
}

std::vector<CandidateSet> candidate_pools(const std::vector<Problem>& problems,
                                          const StochasticPolicy& policy,
                                          const PrmModel& model,
                                          const Featurizer& featurizer, int n,
                                          AggregationRule aggregation,
                                          std::uint64_t seed, int workers,
                                          std::vector<SearchRun>* runs_out) {
  std::vector<CandidateSet> sets(problems.size());
  std::vector<SearchRun> runs(problems.size());
  parallel_indexed(problems.size(), workers, [&](std::size_t i) {
    SearchConfig cfg;
    cfg.strategy = Strategy::BestOfN;
    cfg.n = n;
    cfg.aggregation = aggregation;
    cfg.seed = seed;
    SearchRun run = best_of_n(problems[i], policy, model, cfg, featurizer);
    sets[i] = {problems[i].id, problems[i].gold_answer, run.all_candidates};
    runs[i] = std::move(run);
  });
  if (runs_out) *runs_out = std::move(runs);
  return sets;
}

void write_runs(const std::string& path, const std::vector<SearchRun>& runs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& run : runs) {
    json j;
    j["strategy"] = strategy_name(run.strategy);
    j["problem_id"] = run.selected.problem_id;
    j["selected_answer"] =
        run.selected.complete() ? *run.selected.final_answer : "";
    j["correct"] = run.correct;
    j["truncated"] = run.truncated;
    j["generation_units"] = run.generation_units;
    j["prm_eval_units"] = run.prm_eval_units;
    json cands = json::array();
    for (const auto& c : run.all_candidates) {
      cands.push_back({{"answer", *c.trace.final_answer}, {"score", c.score}});
    }
    j["candidates"] = std::move(cands);
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiment

ExperimentResult run_experiment(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  auto path = [&](const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
  };

  std::string stage = "setup";
  try {
    Featurizer featurizer{config.feature_sigma,
                          derive_seed(config.seed, "features")};

    stage = "generate-problems";
    auto train_problems = generate_problems(
        config.domain, config.train_problems,
        derive_seed(config.seed, "train-problems"), config.env);
    auto eval_problems = generate_problems(
        config.domain, config.eval_problems,
        derive_seed(config.seed, "eval-problems"), config.env);

    stage = "generate-traces";
    auto traces = generate_traces(train_problems, config.policy,
                                  config.traces_per_problem,
                                  derive_seed(config.seed, "gen-traces"),
                                  config.workers);

    stage = "annotate";
    AnnotationParams ap;
    ap.k = config.annotate_k;
    ap.tau = config.annotate_tau;
    ap.ensemble = config.ensemble_m;
    ap.rule = config.hard_label_rule;
    ap.ensemble_error_rates = config.ensemble_error_rates;
    ap.seed = derive_seed(config.seed, "annotate");
    ap.workers = config.workers;
    LabeledData labeled =
        annotate_corpus(train_problems, traces, ap, featurizer, true);
    write_labels(path("labels.jsonl"), labeled.labels);

    stage = "train";
    TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, "train");
    PrmModel model = train(labeled.samples, tc);
    save_model(path("model.json"), model);

    stage = "search";
    int max_n = 1;
    for (int n : config.metric_ns) max_n = std::max(max_n, n);
    std::vector<SearchRun> runs;
    auto pools = candidate_pools(eval_problems, config.policy, model, featurizer,
                                 max_n, config.aggregation,
                                 derive_seed(config.seed, "pool"),
                                 config.workers, &runs);
    auto metric_rows = compute_metrics(pools, config.metric_ns);
    write_runs(path("runs.jsonl"), runs);

    MatrixParams mp;
    mp.strategies = config.strategies;
    mp.budgets = config.budgets;
    mp.wall_clock_caps_ns = config.wall_clock_caps_ns;
    mp.policy = config.policy;
    mp.aggregation = config.aggregation;
    mp.seed = derive_seed(config.seed, "matrix");
    mp.workers = config.workers;
    auto matrix_rows = run_matrix(eval_problems, model, featurizer, mp);

    stage = "report";
    // results.csv holds only deterministic numbers; measured timings and
    // wall-clock-capped cells go to timings.csv
    {
      std::ofstream out(path("results.csv"), std::ios::binary);
      out << "kind,name,n,budget_units,n_problems,accuracy,se\n";
      for (const auto& r : metric_rows) {
        out << "metric," << r.metric << ',' << r.n << ",0," << r.n_problems
            << ',' << fmt6(r.accuracy) << ',' << fmt6(r.se) << '\n';
      }
      for (const auto& r : matrix_rows) {
        if (r.wall_clock_cap_ns != 0) continue;
        out << "matrix," << r.strategy << ",0," << r.budget_units << ','
            << r.n_problems << ',' << fmt6(r.accuracy) << ',' << fmt6(r.se)
            << '\n';
      }
    }
    {
      std::ofstream out(path("timings.csv"), std::ios::binary);
      out << "name,budget_units,wall_clock_cap_ns,accuracy,wall_clock_ms\n";
      for (const auto& r : matrix_rows) {
        out << r.strategy << ',' << r.budget_units << ',' << r.wall_clock_cap_ns
            << ',' << fmt6(r.accuracy) << ',' << fmt6(r.wall_clock_ms) << '\n';
      }
    }

    if (!config.hidden_dim_sweep.empty()) {
      std::ofstream out(path("sweep.csv"), std::ios::binary);
      out << "hidden_dim,val_loss\n";
      for (int h : config.hidden_dim_sweep) {
        TrainConfig sc = tc;
        sc.hidden_dim = h;
        PrmModel swept = train(labeled.samples, sc);
        out << h << ',' << fmt6(swept.meta.final_val_loss) << '\n';
      }
    }
    if (!model.meta.val_loss_curve.empty()) {
      std::ofstream out(path("epoch_curve.csv"), std::ios::binary);
      out << "epoch,val_loss\n";
      for (std::size_t e = 0; e < model.meta.val_loss_curve.size(); ++e) {
        out << (e + 1) << ',' << fmt6(model.meta.val_loss_curve[e]) << '\n';
      }
    }

    // embedded contract checks
    auto find_metric = [&](const std::string& name, int n) -> const MetricRow* {
      for (const auto& r : metric_rows) {
        if (r.metric == name && r.n == n) return &r;
      }
      return nullptr;
    };
    std::vector<std::pair<std::string, bool>> checks;
    {
      const auto *p1 = find_metric("prm@N", 1), *m1 = find_metric("maj@N", 1),
                 *s1 = find_metric("pass@N", 1);
      bool collapse = p1 && m1 && s1 && p1->accuracy == m1->accuracy &&
                      m1->accuracy == s1->accuracy;
      checks.emplace_back("n1-collapse (prm@1 = maj@1 = pass@1)", collapse);

      bool monotone = true, bounded = true;
      double prev_pass = -1.0;
      for (int n : config.metric_ns) {
        const auto *p = find_metric("prm@N", n), *mj = find_metric("maj@N", n),
                   *ps = find_metric("pass@N", n);
        if (!p || !mj || !ps) {
          monotone = bounded = false;
          break;
        }
        monotone = monotone && ps->accuracy >= prev_pass;
        prev_pass = ps->accuracy;
        bounded = bounded && p->accuracy <= ps->accuracy &&
                  mj->accuracy <= ps->accuracy;
      }
      checks.emplace_back("pass@N nondecreasing in N", monotone);
      checks.emplace_back("prm@N and maj@N bounded by pass@N", bounded);
    }
    bool all_ok = true;
    for (const auto& [name, ok] : checks) all_ok = all_ok && ok;

    {
      std::ofstream out(path("report.md"), std::ios::binary);
      out << "# Experiment report\n\n";
      out << "- domain: " << domain_name(config.domain) << "\n";
      out << "- seed: " << config.seed << "\n";
      out << "- train problems: " << train_problems.size()
          << ", eval problems: " << eval_problems.size() << "\n";
      out << "- annotated traces retained: " << labeled.filter_stats.retained
          << "/" << labeled.filter_stats.groups << " ("
          << labeled.discarded_inconsistent << " discarded as inconsistent)\n";
      out << "- training samples: " << labeled.samples.size()
          << ", final validation BCE: " << fmt6(model.meta.final_val_loss)
          << " after " << model.meta.epochs_run << " epochs\n\n";

      out << "## Candidate metrics\n\n";
      out << "| metric | N | accuracy | se |\n|---|---|---|---|\n";
      for (const auto& r : metric_rows) {
        out << "| " << r.metric << " | " << r.n << " | " << fmt6(r.accuracy)
            << " | " << fmt6(r.se) << " |\n";
      }
      out << "\n## Strategy matrix (generation budgets)\n\n";
      out << "| strategy | budget | accuracy | se |\n|---|---|---|---|\n";
      for (const auto& r : matrix_rows) {
        if (r.wall_clock_cap_ns != 0) continue;
        out << "| " << r.strategy << " | " << r.budget_units << " | "
            << fmt6(r.accuracy) << " | " << fmt6(r.se) << " |\n";
      }
      out << "\nAll numbers above are rows of results.csv.\n";
      out << "\n## Checks\n\n";
      for (const auto& [name, ok] : checks) {
        out << "CHECK " << name << ": " << (ok ? "PASS" : "FAIL") << "\n";
      }
    }

    ExperimentResult result;
    result.checks_passed = all_ok;
    result.metric_rows = std::move(metric_rows);
    result.matrix_rows = std::move(matrix_rows);
    result.model = std::move(model);
    result.results_csv_path = path("results.csv");
    return result;
  } catch (const std::exception& e) {
    throw std::runtime_error("experiment stage '" + stage + "' failed: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Curves

std::vector<std::string> emit_curves(const std::string& results_csv,
                                     const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::ifstream in(results_csv);
  if (!in) throw std::runtime_error("cannot open: " + results_csv);
  std::string header;
  std::getline(in, header);
  if (!header.empty() &&
      header != "kind,name,n,budget_units,n_problems,accuracy,se") {
    throw std::runtime_error("emit_curves: unexpected results.csv header");
  }

  struct Point {
    double x, accuracy, se;
  };
  std::map<std::string, std::vector<Point>> matrix_series, metric_series;
  std::vector<std::string> order_matrix, order_metric;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != 7) {
      throw std::runtime_error("emit_curves: bad row at line " +
                               std::to_string(lineno));
    }
    Point p{0, std::stod(cols[5]), std::stod(cols[6])};
    if (cols[0] == "matrix") {
      p.x = std::stod(cols[3]);
      if (!matrix_series.count(cols[1])) order_matrix.push_back(cols[1]);
      matrix_series[cols[1]].push_back(p);
    } else if (cols[0] == "metric") {
      p.x = std::stod(cols[2]);
      if (!metric_series.count(cols[1])) order_metric.push_back(cols[1]);
      metric_series[cols[1]].push_back(p);
    } else {
      throw std::runtime_error("emit_curves: unknown kind '" + cols[0] + "'");
    }
  }

  fs::create_directories(out_dir);
  std::vector<std::string> emitted;
  auto sanitize = [](std::string s) {
    for (char& c : s) {
      if (c == '@' || c == '/' || c == ' ') c = '_';
    }
    return s;
  };
  auto write_series = [&](const std::string& prefix, const std::string& name,
                          const std::string& x_col, const std::vector<Point>& pts) {
    std::string p = (fs::path(out_dir) / (prefix + sanitize(name) + ".csv")).string();
    std::ofstream out(p, std::ios::binary);
    out << x_col << ",accuracy,se\n";
    for (const auto& pt : pts) {
      out << pt.x << ',' << fmt6(pt.accuracy) << ',' << fmt6(pt.se) << '\n';
    }
    emitted.push_back(p);
  };
  for (const auto& name : order_matrix)
    write_series("curve_", name, "budget_units", matrix_series[name]);
  for (const auto& name : order_metric)
    write_series("curve_metric_", name, "n", metric_series[name]);

  if (!matrix_series.empty()) {
    // one static SVG with all strategy curves
    double xmax = 1, W = 640, Hgt = 400, margin = 50;
    for (const auto& [_, pts] : matrix_series)
      for (const auto& p : pts) xmax = std::max(xmax, p.x);
    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                            "#9467bd", "#8c564b"};
    std::string svg_path = (fs::path(out_dir) / "curves.svg").string();
    std::ofstream svg(svg_path, std::ios::binary);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
        << "' height='" << Hgt << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    int ci = 0;
    for (const auto& name : order_matrix) {
      svg << "<polyline fill='none' stroke='" << colors[ci % 6]
          << "' stroke-width='2' points='";
      for (const auto& p : matrix_series[name]) {
        double x = margin + (W - 2 * margin) * (p.x / xmax);
        double y = Hgt - margin - (Hgt - 2 * margin) * p.accuracy;
        svg << x << ',' << y << ' ';
      }
      svg << "'/>\n";
      svg << "<text x='" << (W - margin + 4) << "' y='" << (margin + 16 * ci)
          << "' font-size='11'>" << name << "</text>\n";
      ++ci;
    }
    svg << "</svg>\n";
    emitted.push_back(svg_path);
  }
  return emitted;
}

}  // namespace prmlab
