#pragma once

/**
 * Gradient-activation pattern similarity between response sets.
 *
 * For a reference scorer with parameters theta and a trace s, the activation
 * vector is A_i = |theta_i * dF/dtheta_i| where F is the mean per-step score
 * of the trace. Two traces are compared by the cosine of their activation
 * vectors; two sets by the sum and mean of all pairwise cosines. Entries are
 * nonnegative, so every cosine lands in [0,1].
 */

#include <cstdint>
#include <string>
#include <vector>

#include "prmlab/core.hpp"
#include "prmlab/env.hpp"
#include "prmlab/prm.hpp"
#include "prmlab/search.hpp"

namespace prmlab {

struct ActivationVector {
  std::vector<double> values;  // length = reference model parameter count
  std::string source_input_id;
};

struct SimilarityReport {
  std::vector<std::vector<double>> pairwise;  // |S1| x |S2| cosines
  double sum_similarity = 0.0;                // sum over defined pairs
  double mean_similarity = 0.0;
  std::size_t excluded_pairs = 0;  // pairs with a zero activation vector
  std::string set_a_id;
  std::string set_b_id;
};

// F = mean per-step score; dF/dtheta computed analytically
ActivationVector activation(const PrmModel& reference, const Problem& problem,
                            const ReasoningTrace& trace,
                            const Featurizer& featurizer);

// cosine of activation vectors; returns -1 when either vector is all-zero
double activation_cosine(const ActivationVector& a, const ActivationVector& b);

SimilarityReport set_similarity(const std::vector<ActivationVector>& set_a,
                                const std::vector<ActivationVector>& set_b);

// convenience: compute activations for trace sets against paired problems
std::vector<ActivationVector> activations_for(
    const PrmModel& reference, const std::vector<Problem>& problems,
    const std::vector<ReasoningTrace>& traces, const Featurizer& featurizer);

// Fixed reference scorer used for cross-domain response comparisons: one
// shared unit responds to sound steps in either domain, and one gated unit
// per domain responds to that domain's unsound steps. Clean responses
// therefore load shared parameters while mistakes load domain-specific ones,
// which makes the comparison sensitive to where a response goes wrong rather
// than to which domain it comes from.
PrmModel reference_probe();

// ---------------------------------------------------------------------------
// Cross-domain evaluation: a model trained on one domain scored on problems
// from another, reported against majority-vote and pass baselines.

struct CrossDomainRow {
  std::string metric;  // prm@N / maj@N / pass@N / pass@1
  int n = 1;
  double accuracy = 0.0;
  double se = 0.0;
  std::size_t n_problems = 0;
};

std::vector<CrossDomainRow> cross_domain_eval(const PrmModel& model,
                                              const std::vector<Problem>& problems,
                                              const StochasticPolicy& policy,
                                              const Featurizer& featurizer,
                                              int n_candidates,
                                              AggregationRule aggregation,
                                              std::uint64_t seed);

}  // namespace prmlab
