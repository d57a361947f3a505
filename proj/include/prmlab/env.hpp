#pragma once

/**
 * Synthetic reasoning environments with exact verifiers, plus stochastic
 * step-generating policies.
 *
 * Two domains share one feature schema so that a scorer trained on one can
 * be evaluated on the other:
 *
 *  - MathChain: fold a list of (+,-,x) ops over a start value; each step
 *    asserts the running value after its op. An incorrect step asserts an
 *    off-by-delta value; the error then propagates through every later
 *    consistent step (x operands are nonzero, so the gap never closes).
 *
 *  - CodeAssembly: emit one token per position of a target program from a
 *    16-symbol alphabet; wrong steps emit a position-specific distractor.
 *
 * A correction step re-derives the true state (math: the exact running
 * value; code: repairs every earlier wrong token). Policies emit one with
 * probability recovery_rate once the running state is corrupted.
 *
 * Everything here is pure and deterministic given seeds. Policies do not
 * carry mutable RNG state: each draw is keyed by (policy seed, problem id,
 * prefix content, draw index), so results are independent of scheduling.
 */

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "prmlab/core.hpp"

namespace prmlab {

struct EnvParams {
  int min_steps = 4;
  int max_steps = 8;
  int alphabet_size = 16;
  int distractors_per_position = 3;
};

struct StochasticPolicy {
  double error_rate = 0.2;     // per-step probability of an incorrect step
  double recovery_rate = 0.0;  // P(correction step | state corrupted)
  double spread = 1.0;         // temperature over the distractor list
  std::uint64_t rng_seed = 0;

  StochasticPolicy with_seed(std::uint64_t s) const {
    StochasticPolicy p = *this;
    p.rng_seed = s;
    return p;
  }
};

inline constexpr int kFeatureDim = 12;

struct StepFeatures {
  std::array<double, kFeatureDim> v{};
};

// ---------------------------------------------------------------------------

std::vector<Problem> generate_problems(Domain domain, int count,
                                       std::uint64_t seed,
                                       const EnvParams& params = {});

// Content hash of a trace prefix (step values + correction flags); used to
// key per-prefix RNG streams and score memo caches.
std::uint64_t trace_fingerprint(const ReasoningTrace& prefix);

// Asserted running state implied by a (possibly corrupted) prefix.
// Math: decimal running value; code: the built token sequence joined by ' '.
std::string prefix_state(const Problem& problem, const ReasoningTrace& prefix);

// True iff the prefix's asserted state deviates from the gold state.
bool prefix_corrupted(const Problem& problem, const ReasoningTrace& prefix);

// One stochastic next step. draw_index distinguishes repeated proposals at
// the same prefix. Throws std::logic_error if the prefix is already complete.
Step policy_step(const StochasticPolicy& policy, const Problem& problem,
                 const ReasoningTrace& prefix, std::uint64_t draw_index = 0);

// Complete the prefix with policy_step calls; sets final_answer. Charges one
// generation unit per step to the ledger when given.
ReasoningTrace rollout(const StochasticPolicy& policy, const Problem& problem,
                       ReasoningTrace prefix, BudgetLedger* ledger = nullptr);

// Exact per-step correctness against the gold chain. Pure function.
bool verify_step(const Problem& problem, const ReasoningTrace& prefix,
                 const Step& step);

// Index of the first verifier-incorrect step, or -1 if none.
int first_error_index(const Problem& problem, const ReasoningTrace& trace);

// Canonical final answer implied by a full-length trace.
std::string final_answer(const Problem& problem, const ReasoningTrace& trace);

// All distinct continuations at this prefix: the consistent continuation,
// every distractor, and (when the state is corrupted) a correction step.
// Deterministic order; used for exhaustive expansion in beam/MCTS.
std::vector<Step> candidate_steps(const Problem& problem,
                                  const ReasoningTrace& prefix);

// Feature vector for a step in context. Layout:
//   0 noisy self-consistency  clamp(verifier_bit + sigma*N(0,1), 0, 1)
//   1 t / T
//   2 state magnitude statistic
//   3 correction marker
//   4 MathChain one-hot      5 CodeAssembly one-hot
//   6 second consistency channel (2*sigma noise)
//   7 last-step flag
//   8 action code (operator / token index, normalized)
//   9 pure noise channel
//  10 T / 20
//  11 constant bias
StepFeatures extract_features(const Problem& problem,
                              const ReasoningTrace& prefix, const Step& step,
                              double sigma, std::uint64_t noise_seed);

}  // namespace prmlab
