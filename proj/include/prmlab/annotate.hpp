#pragma once

/**
 * Automatic step-level annotation: Monte-Carlo rollout estimation of prefix
 * success, bisection localization of the first error in a wrong trace, and
 * ensemble consensus filtering across annotators.
 *
 * Per-trace annotation is embarrassingly parallel; annotators share only the
 * immutable problem set and an atomic BudgetLedger. All rollout RNG streams
 * are keyed by trace content, never by scheduling order.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prmlab/core.hpp"
#include "prmlab/env.hpp"

namespace prmlab {

enum class HardLabelRule { AnySuccess, ThresholdTau };

struct RolloutOracleConfig {
  StochasticPolicy rollout_policy;
  int k = 16;         // rollouts per estimate
  double tau = 0.5;   // success threshold for localization
  HardLabelRule hard_label_rule = HardLabelRule::AnySuccess;
  std::string annotator_id = "a0";
};

struct AnnotatedTrace {
  ReasoningTrace trace;
  std::vector<StepLabel> labels;  // steps past the first error are excluded
  std::optional<int> first_error_index;
  std::string annotator_id;
};

// Budget ran out mid-estimation; carries the rollouts completed so far.
class PartialEstimateError : public BudgetExhausted {
 public:
  PartialEstimateError(const std::string& what, int completed)
      : BudgetExhausted(what), completed_rollouts(completed) {}
  int completed_rollouts;
};

// Every prefix of a wrong trace estimated above tau; the trace is unusable.
class InconsistentOracleError : public std::runtime_error {
 public:
  explicit InconsistentOracleError(const std::string& what)
      : std::runtime_error(what) {}
};

// Success fraction of k completions from the prefix. k_override replaces
// oracle.k for the bisection re-estimation path.
StepLabel mc_estimate_step(const Problem& problem, const ReasoningTrace& prefix,
                           const RolloutOracleConfig& oracle,
                           BudgetLedger* ledger = nullptr, int k_override = 0);

// First index where rollout success collapses below tau, found by bisection
// over prefix lengths. The located index is confirmed with one 2k-rollout
// re-estimate; a contradiction resumes the search to the right (at most
// twice) before InconsistentOracleError. estimates_used, when given, counts
// mc_estimate_step calls.
int locate_first_error(const Problem& problem, const ReasoningTrace& trace,
                       const RolloutOracleConfig& oracle,
                       BudgetLedger* ledger = nullptr,
                       int* estimates_used = nullptr);

AnnotatedTrace annotate_trace(const Problem& problem, const ReasoningTrace& trace,
                              const RolloutOracleConfig& oracle,
                              BudgetLedger* ledger = nullptr);

struct FilterStats {
  std::size_t groups = 0;
  std::size_t retained = 0;
  std::size_t dropped = 0;
};

// Keeps a trace iff all m annotators report the same first_error_index
// (window > 0 relaxes to max-min <= window). The consensus annotation is the
// lexicographically-first annotator's. Groups with != m annotations or
// duplicate annotator ids are a schema error.
std::vector<AnnotatedTrace> ensemble_filter(
    const std::vector<AnnotatedTrace>& annotations, int m,
    FilterStats* stats = nullptr, int window = 0);

}  // namespace prmlab
