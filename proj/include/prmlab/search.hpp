#pragma once

/**
 * Scorer-guided test-time strategies under a shared budget ledger.
 *
 * Budget units: one generation unit per generated step, one PRM-eval unit
 * per forward pass. Hitting a cap truncates the run (best result so far,
 * truncated flag) instead of failing it.
 *
 * Every strategy is a deterministic function of (problem, config, seed);
 * per-problem RNG streams are keyed by (seed, problem id), so matrix runs
 * are reproducible independent of worker count.
 */

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prmlab/core.hpp"
#include "prmlab/env.hpp"
#include "prmlab/prm.hpp"

namespace prmlab {

enum class Strategy { BestOfN, Beam, Mcts, MajorityVote };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);

struct MctsConfig {
  double exploration_c = std::sqrt(2.0);
  int iterations = 64;
  int max_children = 3;
  int rollouts_per_expansion = 1;
  bool highest_q_chain = false;       // answer chain by Q instead of visits
  bool correctness_backprop = false;  // diagnostics only: backprop gold
                                      // correctness instead of PRM value
};

struct SearchConfig {
  Strategy strategy = Strategy::BestOfN;
  int n = 8;             // BestOfN / MajorityVote candidate count
  int beam_width = 4;    // K
  int max_children = 3;  // proposals per expanded path (beam and MCTS)
  MctsConfig mcts;
  AggregationRule aggregation = AggregationRule::PrmMin;
  std::uint64_t seed = 0;
  BudgetCaps caps;
};

struct ScoredCandidate {
  ReasoningTrace trace;
  double score = 0.0;
};

struct SearchRun {
  Strategy strategy = Strategy::BestOfN;
  ReasoningTrace selected;
  std::vector<ScoredCandidate> all_candidates;
  std::uint64_t generation_units = 0;
  std::uint64_t prm_eval_units = 0;
  std::uint64_t wall_clock_ns = 0;
  bool truncated = false;
  bool correct = false;
};

// UCT(s,a) = Q + c * sqrt(ln N(s) / N(s,a)); unvisited edges get +infinity
double uct(double q, std::uint64_t n_parent, std::uint64_t n_edge, double c);

SearchRun best_of_n(const Problem& problem, const StochasticPolicy& policy,
                    const PrmModel& model, const SearchConfig& config,
                    const Featurizer& featurizer);

SearchRun beam_search(const Problem& problem, const StochasticPolicy& policy,
                      const PrmModel& model, const SearchConfig& config,
                      const Featurizer& featurizer);

SearchRun mcts(const Problem& problem, const StochasticPolicy& policy,
               const PrmModel& model, const SearchConfig& config,
               const Featurizer& featurizer);

// model may be null; it is only used to break answer ties by mean score
SearchRun majority_vote(const Problem& problem, const StochasticPolicy& policy,
                        const SearchConfig& config, const Featurizer& featurizer,
                        const PrmModel* model = nullptr);

SearchRun run_strategy(const Problem& problem, const StochasticPolicy& policy,
                       const PrmModel& model, const SearchConfig& config,
                       const Featurizer& featurizer);

// ---------------------------------------------------------------------------
// Strategy x budget accuracy matrix (generation-unit cells, plus optional
// wall-clock-capped cells)

struct MatrixRow {
  std::string strategy;
  std::uint64_t budget_units = 0;  // 0 for wall-clock cells
  std::uint64_t wall_clock_cap_ns = 0;  // 0 for budget cells
  std::size_t n_problems = 0;
  double accuracy = 0.0;
  double se = 0.0;
  double wall_clock_ms = 0.0;
};

struct MatrixParams {
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> budgets;            // generation units per problem
  std::vector<std::uint64_t> wall_clock_caps_ns; // optional extra cells
  StochasticPolicy policy;
  AggregationRule aggregation = AggregationRule::PrmMin;
  int max_children = 3;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Derives per-strategy candidate counts from the budget and enforces the cap
// through the ledger; rows come back in (strategy, budget) order.
std::vector<MatrixRow> run_matrix(const std::vector<Problem>& problems,
                                  const PrmModel& model,
                                  const Featurizer& featurizer,
                                  const MatrixParams& params);

// Config for one matrix cell: candidate counts sized to the budget cap.
SearchConfig cell_config(Strategy strategy, std::uint64_t budget,
                         std::size_t typical_steps, const MatrixParams& params);

}  // namespace prmlab
