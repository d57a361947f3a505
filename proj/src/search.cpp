#include "prmlab/search.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <thread>

#include "prmlab/rng.hpp"

namespace prmlab {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::BestOfN: return "best_of_n";
    case Strategy::Beam: return "beam";
    case Strategy::Mcts: return "mcts";
    case Strategy::MajorityVote: return "majority_vote";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "best_of_n") return Strategy::BestOfN;
  if (s == "beam") return Strategy::Beam;
  if (s == "mcts") return Strategy::Mcts;
  if (s == "majority_vote") return Strategy::MajorityVote;
  throw std::invalid_argument("unknown strategy: " + s);
}

double uct(double q, std::uint64_t n_parent, std::uint64_t n_edge, double c) {
  if (n_parent < 1) throw std::invalid_argument("uct: n_parent < 1");
  if (n_edge == 0) return std::numeric_limits<double>::infinity();
  return q + c * std::sqrt(std::log(static_cast<double>(n_parent)) /
                           static_cast<double>(n_edge));
}

namespace {

void finalize(SearchRun& run, const Problem& problem, const BudgetLedger& ledger) {
  run.generation_units = ledger.generation_units();
  run.prm_eval_units = ledger.prm_eval_units();
  run.wall_clock_ns = ledger.wall_clock_ns();
  run.correct = run.selected.complete() &&
                *run.selected.final_answer == problem.gold_answer;
}

// proposals for one prefix: full enumeration when max_children covers every
// candidate, otherwise deduped policy draws
std::vector<Step> propose_steps(const Problem& problem,
                                const ReasoningTrace& prefix,
                                const StochasticPolicy& policy,
                                int max_children) {
  auto candidates = candidate_steps(problem, prefix);
  if (max_children >= static_cast<int>(candidates.size())) return candidates;
  std::vector<Step> out;
  for (int d = 0; d < max_children; ++d) {
    Step s = policy_step(policy, problem, prefix,
                         static_cast<std::uint64_t>(d));
    bool dup = false;
    for (const auto& e : out) dup = dup || e.value == s.value;
    if (!dup) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

SearchRun best_of_n(const Problem& problem, const StochasticPolicy& policy,
                    const PrmModel& model, const SearchConfig& config,
                    const Featurizer& featurizer) {
  if (config.n < 1) throw std::invalid_argument("best_of_n: N < 1");
  BudgetLedger ledger(config.caps);
  SearchRun run;
  run.strategy = Strategy::BestOfN;
  try {
    for (int i = 0; i < config.n; ++i) {
      ledger.check_wall_clock();
      StochasticPolicy p = policy.with_seed(
          derive_seed(config.seed, problem.id, static_cast<std::uint64_t>(i)));
      ReasoningTrace empty;
      empty.problem_id = problem.id;
      empty.generator_seed = p.rng_seed;
      ReasoningTrace t = rollout(p, problem, empty, &ledger);
      double score =
          score_trace(model, problem, t, config.aggregation, featurizer, &ledger)
              .aggregate;
      run.all_candidates.push_back({std::move(t), score});
    }
  } catch (const BudgetExhausted&) {
    run.truncated = true;
  }
  // argmax; ties go to the lowest candidate index
  std::size_t best = 0;
  for (std::size_t i = 1; i < run.all_candidates.size(); ++i) {
    if (run.all_candidates[i].score > run.all_candidates[best].score) best = i;
  }
  if (!run.all_candidates.empty()) run.selected = run.all_candidates[best].trace;
  finalize(run, problem, ledger);
  return run;
}

SearchRun beam_search(const Problem& problem, const StochasticPolicy& policy,
                      const PrmModel& model, const SearchConfig& config,
                      const Featurizer& featurizer) {
  if (config.beam_width < 1) throw std::invalid_argument("beam_search: K < 1");
  BudgetLedger ledger(config.caps);
  SearchRun run;
  run.strategy = Strategy::Beam;

  struct Beam {
    ReasoningTrace prefix;
    std::vector<double> step_scores;
    double cumulative = 0.0;
  };
  StochasticPolicy draw_policy =
      policy.with_seed(derive_seed(config.seed, problem.id, 0xbea3ULL));

  std::vector<Beam> beams(1);
  beams[0].prefix.problem_id = problem.id;
  beams[0].prefix.generator_seed = draw_policy.rng_seed;
  const std::size_t total = problem.num_steps();

  try {
    for (std::size_t depth = 0; depth < total; ++depth) {
      ledger.check_wall_clock();
      std::vector<Beam> expanded;
      for (const auto& beam : beams) {
        for (auto& step :
             propose_steps(problem, beam.prefix, draw_policy, config.max_children)) {
          ledger.charge_generation(1);
          StepFeatures f = featurizer(problem, beam.prefix, step);
          ledger.charge_prm_eval(1);
          double p = model.score(f);
          Beam child = beam;
          child.prefix.steps.push_back(std::move(step));
          child.step_scores.push_back(p);
          child.cumulative += p;
          expanded.push_back(std::move(child));
        }
      }
      // rank by cumulative per-step score; stable to keep ties deterministic
      std::stable_sort(expanded.begin(), expanded.end(),
                       [](const Beam& a, const Beam& b) {
                         return a.cumulative > b.cumulative;
                       });
      if (static_cast<int>(expanded.size()) > config.beam_width)
        expanded.resize(config.beam_width);
      beams = std::move(expanded);
    }
  } catch (const BudgetExhausted&) {
    run.truncated = true;
  }

  for (auto& beam : beams) {
    if (beam.prefix.steps.size() != total) continue;
    beam.prefix.final_answer = final_answer(problem, beam.prefix);
    double agg = config.aggregation == AggregationRule::PrmLast
                     ? beam.step_scores.back()
                     : *std::min_element(beam.step_scores.begin(),
                                         beam.step_scores.end());
    run.all_candidates.push_back({std::move(beam.prefix), agg});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < run.all_candidates.size(); ++i) {
    if (run.all_candidates[i].score > run.all_candidates[best].score) best = i;
  }
  if (!run.all_candidates.empty()) run.selected = run.all_candidates[best].trace;
  finalize(run, problem, ledger);
  return run;
}

// ---------------------------------------------------------------------------
// MCTS

namespace {

struct MctsNode {
  ReasoningTrace prefix;
  std::vector<std::unique_ptr<MctsNode>> children;
  std::uint64_t visits = 0;  // doubles as the incoming-edge count N(s,a)
  double value_sum = 0.0;
  // set once the policy stops yielding novel next steps for this prefix
  bool proposals_done = false;
  // next draw_index for policy proposals at this prefix
  std::uint64_t draws = 0;
  // PRM score of this node's last step, recorded when it was generated
  double step_score = 0.0;
  // proposals already generated (and paid for) but not yet materialized,
  // kept with their step scores so the best one is materialized first
  std::vector<std::pair<double, Step>> pending;
  // highest-value simulated completion seen through this node
  double best_value = -1.0;
  ReasoningTrace best_completion;

  double q() const { return visits ? value_sum / static_cast<double>(visits) : 0.0; }
};

}  // namespace

SearchRun mcts(const Problem& problem, const StochasticPolicy& policy,
               const PrmModel& model, const SearchConfig& config,
               const Featurizer& featurizer) {
  const MctsConfig& mc = config.mcts;
  if (mc.iterations < 1) throw std::invalid_argument("mcts: iterations < 1");
  BudgetLedger ledger(config.caps);
  SearchRun run;
  run.strategy = Strategy::Mcts;

  MctsNode root;
  root.prefix.problem_id = problem.id;
  root.prefix.generator_seed = derive_seed(config.seed, problem.id, 0x3c75ULL);
  const std::size_t total = problem.num_steps();

  // once the cap trips we finish the current iteration uncharged, then stop
  bool stop = false;
  auto soft_charge_gen = [&](std::uint64_t units) {
    try {
      ledger.charge_generation(units);
    } catch (const BudgetExhausted&) {
      stop = true;
      run.truncated = true;
    }
  };

  StochasticPolicy draw_policy = policy.with_seed(root.prefix.generator_seed);

  for (int iter = 0; iter < mc.iterations && !stop; ++iter) {
    try {
      ledger.check_wall_clock();
    } catch (const BudgetExhausted&) {
      run.truncated = true;
      break;
    }
    if (ledger.generation_exhausted()) {
      run.truncated = true;
      break;
    }

    // a step scoring at least this much looks like a sound continuation
    constexpr double kSoundStep = 0.7;

    // one proposal round: the policy proposes up to max_children novel steps,
    // each charged as generated; scoring them up front lets the most
    // promising proposal be materialized (and simulated) first, while the
    // rest wait as already-paid-for pending proposals
    auto propose_at = [&](MctsNode* n) {
      std::size_t want = static_cast<std::size_t>(mc.max_children);
      for (std::uint64_t a = 0; a < 2 * want && n->pending.size() < want && !stop;
           ++a) {
        Step step = policy_step(draw_policy, problem, n->prefix, n->draws++);
        bool novel = true;
        for (const auto& child : n->children) {
          if (child->prefix.steps.back().value == step.value) {
            novel = false;
            break;
          }
        }
        for (const auto& [s, pend] : n->pending) {
          if (pend.value == step.value) {
            novel = false;
            break;
          }
        }
        if (!novel) continue;
        soft_charge_gen(1);
        if (stop) break;
        StepFeatures f = featurizer(problem, n->prefix, step);
        try {
          ledger.charge_prm_eval(1);
        } catch (const BudgetExhausted&) {
          stop = true;
          run.truncated = true;
        }
        double s = model.score(std::vector<double>(f.v.begin(), f.v.end()));
        n->pending.emplace_back(s, std::move(step));
      }
      if (n->pending.empty() &&
          n->draws >= 8ULL * static_cast<std::uint64_t>(mc.max_children))
        n->proposals_done = true;
    };

    // turn the best pending proposal into a child node; a grafted simulation
    // suffix may have materialized the same value in the meantime, in which
    // case the redundant proposal is dropped
    auto materialize_at = [&](MctsNode* n) -> MctsNode* {
      while (!n->pending.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n->pending.size(); ++i) {
          if (n->pending[i].first > n->pending[best].first) best = i;
        }
        double step_score = n->pending[best].first;
        Step step = std::move(n->pending[best].second);
        n->pending.erase(n->pending.begin() + static_cast<std::ptrdiff_t>(best));
        bool dup = false;
        for (const auto& child : n->children) {
          if (child->prefix.steps.back().value == step.value) {
            dup = true;
            break;
          }
        }
        if (dup) continue;
        auto child = std::make_unique<MctsNode>();
        child->prefix = n->prefix;
        child->prefix.steps.push_back(std::move(step));
        child->step_score = step_score;
        n->children.push_back(std::move(child));
        return n->children.back().get();
      }
      return nullptr;
    };

    // selection with guided progressive widening: a node generates
    // alternatives only while none of its children looks like a sound
    // continuation (or a pending proposal outscores them all), so budget
    // flows depthward along the most promising chain
    std::vector<MctsNode*> path{&root};
    MctsNode* node = &root;
    bool fresh = false;
    while (node->prefix.steps.size() < total) {
      double best_child_step = -1.0;
      for (const auto& child : node->children)
        best_child_step = std::max(best_child_step, child->step_score);
      bool want_more =
          !node->proposals_done &&
          node->children.size() < static_cast<std::size_t>(mc.max_children);
      bool widen =
          want_more && (node->children.empty() ||
                        best_child_step < kSoundStep || !node->pending.empty());
      if (widen) {
        if (node->pending.empty()) propose_at(node);
        double best_pending = -1.0;
        for (const auto& [s, pend] : node->pending)
          best_pending = std::max(best_pending, s);
        bool worth_it = node->children.empty() ||
                        best_child_step < kSoundStep ||
                        best_pending > best_child_step;
        if (worth_it) {
          if (MctsNode* child = materialize_at(node)) {
            node = child;
            path.push_back(node);
            fresh = true;
            break;  // simulate from the freshly expanded child
          }
        }
      }
      if (node->children.empty()) break;  // nothing to descend into
      MctsNode* pick = nullptr;
      double best_u = -std::numeric_limits<double>::infinity();
      std::uint64_t n_parent = std::max<std::uint64_t>(1, node->visits);
      for (auto& child : node->children) {
        double u = uct(child->q(), n_parent, child->visits, mc.exploration_c);
        if (u > best_u) {
          best_u = u;
          pick = child.get();
        }
      }
      node = pick;
      path.push_back(node);
    }

    // revisiting an already-simulated leaf adds no information, so such an
    // iteration spends its turn on the deepest already-proposed alternative
    // along the chain instead; this keeps leftover budget buying diversity
    if (!fresh && !stop && node->prefix.steps.size() == total &&
        node->visits > 0) {
      for (std::size_t pi = path.size(); pi-- > 0;) {
        MctsNode* pn = path[pi];
        if (pn->prefix.steps.size() >= total || pn->proposals_done ||
            pn->children.size() >= static_cast<std::size_t>(mc.max_children))
          continue;
        if (pn->pending.empty()) propose_at(pn);
        if (MctsNode* child = materialize_at(pn)) {
          path.resize(pi + 1);
          node = child;
          path.push_back(node);
          break;
        }
      }
    }

    // simulation
    for (int r = 0; r < std::max(1, mc.rollouts_per_expansion); ++r) {
      ReasoningTrace completed;
      if (node->prefix.steps.size() == total) {
        completed = node->prefix;
        completed.final_answer = final_answer(problem, completed);
      } else {
        StochasticPolicy sim = policy.with_seed(derive_seed(
            config.seed, problem.id,
            mix64(static_cast<std::uint64_t>(iter) * 131 + r + 1)));
        completed = node->prefix;
        completed.generator_seed = sim.rng_seed;
        while (completed.steps.size() < total) {
          soft_charge_gen(1);
          completed.steps.push_back(policy_step(sim, problem, completed));
        }
        completed.final_answer = final_answer(problem, completed);
      }
      // value backpropagated into the tree is the mean step score: it grades
      // completions by how deep they stay on track, which keeps Q informative
      // even before any flawless completion exists. Candidate ranking (and
      // extraction) still uses the configured aggregation rule.
      double value;
      double rank_score;
      std::vector<double> step_scores;
      if (mc.correctness_backprop) {
        value = *completed.final_answer == problem.gold_answer ? 1.0 : 0.0;
        rank_score = value;
      } else {
        TraceScore ts;
        try {
          ts = score_trace(model, problem, completed, config.aggregation,
                           featurizer, &ledger);
        } catch (const BudgetExhausted&) {
          stop = true;
          run.truncated = true;
          ts = score_trace(model, problem, completed, config.aggregation,
                           featurizer, nullptr);
        }
        rank_score = ts.aggregate;
        double sum = 0.0;
        for (double s : ts.per_step) sum += s;
        value = ts.per_step.empty() ? ts.aggregate
                                    : sum / static_cast<double>(ts.per_step.size());
        step_scores = std::move(ts.per_step);
      }

      run.all_candidates.push_back({completed, rank_score});
      // backpropagation
      for (MctsNode* n : path) {
        n->visits += 1;
        n->value_sum += value;
        if (rank_score > n->best_value) {
          n->best_value = rank_score;
          n->best_completion = completed;
        }
      }
      // graft the simulated suffix into the tree: its steps are already paid
      // for, so keeping them lets later iterations revisit and extend deep
      // prefixes without regenerating them
      MctsNode* cur = node;
      for (std::size_t i = cur->prefix.steps.size(); i < completed.steps.size();
           ++i) {
        MctsNode* next = nullptr;
        for (auto& child : cur->children) {
          if (child->prefix.steps.back().value == completed.steps[i].value) {
            next = child.get();
            break;
          }
        }
        if (!next) {
          auto child = std::make_unique<MctsNode>();
          child->prefix = cur->prefix;
          child->prefix.steps.push_back(completed.steps[i]);
          child->step_score = i < step_scores.size() ? step_scores[i] : value;
          cur->children.push_back(std::move(child));
          next = cur->children.back().get();
        }
        cur = next;
        cur->visits += 1;
        cur->value_sum += value;
        if (rank_score > cur->best_value) {
          cur->best_value = rank_score;
          cur->best_completion = completed;
        }
      }
    }
  }

  // answer extraction: walk the most-visited (or highest-Q) child chain and
  // emit the best-value completion recorded along it. Every completion stored
  // on a chain node passed through the chain's prefix, so deeper nodes narrow
  // the choice while the root keeps the globally best simulation in play.
  MctsNode* node = &root;
  const MctsNode* best_on_chain = &root;
  while (!node->children.empty()) {
    MctsNode* pick = nullptr;
    for (auto& child : node->children) {
      if (child->visits == 0) continue;
      if (!pick) {
        pick = child.get();
        continue;
      }
      bool better = mc.highest_q_chain ? child->q() > pick->q()
                                       : child->visits > pick->visits;
      if (better) pick = child.get();
    }
    if (!pick) break;
    node = pick;
    if (node->best_value > best_on_chain->best_value) best_on_chain = node;
  }
  if (best_on_chain->best_value >= 0.0)
    run.selected = best_on_chain->best_completion;
  finalize(run, problem, ledger);
  return run;
}

SearchRun majority_vote(const Problem& problem, const StochasticPolicy& policy,
                        const SearchConfig& config, const Featurizer& featurizer,
                        const PrmModel* model) {
  if (config.n < 1) throw std::invalid_argument("majority_vote: N < 1");
  BudgetLedger ledger(config.caps);
  SearchRun run;
  run.strategy = Strategy::MajorityVote;
  try {
    for (int i = 0; i < config.n; ++i) {
      ledger.check_wall_clock();
      StochasticPolicy p = policy.with_seed(
          derive_seed(config.seed, problem.id, static_cast<std::uint64_t>(i)));
      ReasoningTrace empty;
      empty.problem_id = problem.id;
      empty.generator_seed = p.rng_seed;
      ReasoningTrace t = rollout(p, problem, empty, &ledger);
      double score = 0.0;
      if (model) {
        score = score_trace(*model, problem, t, config.aggregation, featurizer,
                            &ledger)
                    .aggregate;
      }
      run.all_candidates.push_back({std::move(t), score});
    }
  } catch (const BudgetExhausted&) {
    run.truncated = true;
  }

  // tally canonical answers; mode wins, ties by mean score (when a model is
  // supplied) and then by first occurrence
  struct Tally {
    int count = 0;
    double score_sum = 0.0;
    std::size_t first_index = 0;
  };
  std::map<std::string, Tally> tallies;
  for (std::size_t i = 0; i < run.all_candidates.size(); ++i) {
    const auto& c = run.all_candidates[i];
    auto [it, inserted] = tallies.try_emplace(*c.trace.final_answer);
    if (inserted) it->second.first_index = i;
    it->second.count += 1;
    it->second.score_sum += c.score;
  }
  const Tally* best = nullptr;
  std::string best_answer;
  for (const auto& [answer, t] : tallies) {
    if (!best) {
      best = &t;
      best_answer = answer;
      continue;
    }
    bool wins = t.count > best->count;
    if (!wins && t.count == best->count) {
      if (model) {
        double mean_new = t.score_sum / t.count;
        double mean_best = best->score_sum / best->count;
        wins = mean_new > mean_best ||
               (mean_new == mean_best && t.first_index < best->first_index);
      } else {
        wins = t.first_index < best->first_index;
      }
    }
    if (wins) {
      best = &t;
      best_answer = answer;
    }
  }
  if (best) run.selected = run.all_candidates[best->first_index].trace;
  finalize(run, problem, ledger);
  return run;
}

SearchRun run_strategy(const Problem& problem, const StochasticPolicy& policy,
                       const PrmModel& model, const SearchConfig& config,
                       const Featurizer& featurizer) {
  switch (config.strategy) {
    case Strategy::BestOfN: return best_of_n(problem, policy, model, config, featurizer);
    case Strategy::Beam: return beam_search(problem, policy, model, config, featurizer);
    case Strategy::Mcts: return mcts(problem, policy, model, config, featurizer);
    case Strategy::MajorityVote:
      return majority_vote(problem, policy, config, featurizer, &model);
  }
  throw std::logic_error("run_strategy: bad strategy");
}

// ---------------------------------------------------------------------------

SearchConfig cell_config(Strategy strategy, std::uint64_t budget,
                         std::size_t typical_steps, const MatrixParams& params) {
  SearchConfig cfg;
  cfg.strategy = strategy;
  cfg.aggregation = params.aggregation;
  cfg.max_children = params.max_children;
  cfg.seed = params.seed;
  cfg.caps.generation_units = budget;
  std::uint64_t steps = std::max<std::uint64_t>(1, typical_steps);
  std::uint64_t rollouts = std::max<std::uint64_t>(1, budget / steps);
  cfg.n = static_cast<int>(rollouts);
  cfg.beam_width = static_cast<int>(std::max<std::uint64_t>(
      1, budget / (steps * static_cast<std::uint64_t>(params.max_children))));
  cfg.mcts.max_children = params.max_children;
  // generous iteration allowance: iterations that revisit known leaves are
  // nearly free, so the generation cap is the binding resource
  cfg.mcts.iterations = static_cast<int>(
      std::min<std::uint64_t>(4 * budget, 1 << 20));
  return cfg;
}

std::vector<MatrixRow> run_matrix(const std::vector<Problem>& problems,
                                  const PrmModel& model,
                                  const Featurizer& featurizer,
                                  const MatrixParams& params) {
  if (problems.empty()) throw std::invalid_argument("run_matrix: no problems");

  std::size_t typical_steps = 0;
  for (const auto& p : problems) typical_steps += p.num_steps();
  typical_steps = std::max<std::size_t>(1, typical_steps / problems.size());

  auto run_cell = [&](const SearchConfig& base_cfg) {
    std::vector<char> correct(problems.size(), 0);
    auto started = std::chrono::steady_clock::now();
    std::atomic<std::size_t> next{0};
    int workers = std::max(1, params.workers);
    auto work = [&]() {
      for (std::size_t i = next.fetch_add(1); i < problems.size();
           i = next.fetch_add(1)) {
        SearchRun r =
            run_strategy(problems[i], params.policy, model, base_cfg, featurizer);
        correct[i] = r.correct ? 1 : 0;
      }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    double ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - started)
                    .count();
    std::size_t hits = 0;
    for (char c : correct) hits += c;
    double acc = static_cast<double>(hits) / static_cast<double>(problems.size());
    double se = std::sqrt(acc * (1.0 - acc) / static_cast<double>(problems.size()));
    return std::tuple{acc, se, ms};
  };

  std::vector<MatrixRow> rows;
  for (Strategy strategy : params.strategies) {
    for (std::uint64_t budget : params.budgets) {
      SearchConfig cfg = cell_config(strategy, budget, typical_steps, params);
      auto [acc, se, ms] = run_cell(cfg);
      rows.push_back({strategy_name(strategy), budget, 0, problems.size(), acc,
                      se, ms});
    }
    for (std::uint64_t cap_ns : params.wall_clock_caps_ns) {
      // generous candidate counts; the wall clock is the limiter
      SearchConfig cfg = cell_config(strategy, 1u << 20, typical_steps, params);
      cfg.caps.generation_units.reset();
      cfg.caps.wall_clock_ns = cap_ns;
      auto [acc, se, ms] = run_cell(cfg);
      rows.push_back(
          {strategy_name(strategy), 0, cap_ns, problems.size(), acc, se, ms});
    }
  }
  return rows;
}

}  // namespace prmlab
