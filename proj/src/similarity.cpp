#include "prmlab/similarity.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "prmlab/rng.hpp"

namespace prmlab {

ActivationVector activation(const PrmModel& reference, const Problem& problem,
                            const ReasoningTrace& trace,
                            const Featurizer& featurizer) {
  if (trace.steps.empty())
    throw std::invalid_argument("activation: empty trace");
  const std::size_t P = reference.param_count();
  std::vector<double> mean_grad(P, 0.0);
  ReasoningTrace prefix;
  prefix.problem_id = trace.problem_id;
  prefix.generator_seed = trace.generator_seed;
  for (const auto& s : trace.steps) {
    StepFeatures f = featurizer(problem, prefix, s);
    auto g = reference.score_gradient(std::vector<double>(f.v.begin(), f.v.end()));
    for (std::size_t i = 0; i < P; ++i) mean_grad[i] += g[i];
    prefix.steps.push_back(s);
  }
  const double inv_t = 1.0 / static_cast<double>(trace.steps.size());
  ActivationVector a;
  a.source_input_id = trace.trace_id();
  a.values.resize(P);
  const auto& theta = reference.params();
  for (std::size_t i = 0; i < P; ++i) {
    a.values[i] = std::fabs(theta[i] * mean_grad[i] * inv_t);
  }
  return a;
}

double activation_cosine(const ActivationVector& a, const ActivationVector& b) {
  if (a.values.size() != b.values.size())
    throw std::invalid_argument("activation_cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return -1.0;  // undefined pair
  if (a.values == b.values) return 1.0;     // self-similarity is exact
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, 0.0, 1.0);
}

SimilarityReport set_similarity(const std::vector<ActivationVector>& set_a,
                                const std::vector<ActivationVector>& set_b) {
  if (set_a.empty() || set_b.empty())
    throw std::invalid_argument("set_similarity: empty set");
  SimilarityReport report;
  report.pairwise.assign(set_a.size(), std::vector<double>(set_b.size(), -1.0));
  std::size_t defined = 0;
  for (std::size_t i = 0; i < set_a.size(); ++i) {
    for (std::size_t j = 0; j < set_b.size(); ++j) {
      double c = activation_cosine(set_a[i], set_b[j]);
      report.pairwise[i][j] = c;
      if (c < 0.0) {
        ++report.excluded_pairs;
      } else {
        report.sum_similarity += c;
        ++defined;
      }
    }
  }
  report.mean_similarity =
      defined ? report.sum_similarity / static_cast<double>(defined) : 0.0;
  return report;
}

std::vector<ActivationVector> activations_for(
    const PrmModel& reference, const std::vector<Problem>& problems,
    const std::vector<ReasoningTrace>& traces, const Featurizer& featurizer) {
  std::map<std::string, const Problem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;
  std::vector<ActivationVector> out;
  out.reserve(traces.size());
  for (const auto& t : traces) {
    auto it = by_id.find(t.problem_id);
    if (it == by_id.end())
      throw std::invalid_argument("activations_for: unknown problem " + t.problem_id);
    out.push_back(activation(reference, *it->second, t, featurizer));
  }
  return out;
}

PrmModel reference_probe() {
  PrmModel probe(kFeatureDim, 3);
  auto& theta = probe.params();
  std::fill(theta.begin(), theta.end(), 0.0);
  const double k = 6.0;
  const int H = 3, F = kFeatureDim;
  auto w1 = [&](int h, int i) -> double& { return theta[h * F + i]; };
  auto b1 = [&](int h) -> double& { return theta[H * F + h]; };
  auto w2 = [&](int h) -> double& { return theta[H * F + H + h]; };
  // unit 0: mid-range (largest gradient) exactly on sound steps, any domain
  w1(0, 0) = k;
  b1(0) = -k;
  // unit 1: mid-range only on MathChain steps with a low verifier signal;
  // CodeAssembly steps push it deep into saturation
  w1(1, 0) = k;
  w1(1, 4) = 2 * k;
  b1(1) = -2 * k;
  // unit 2: the CodeAssembly counterpart
  w1(2, 0) = k;
  w1(2, 5) = 2 * k;
  b1(2) = -2 * k;
  w2(0) = 0.1;
  w2(1) = 0.1;
  w2(2) = 0.1;
  return probe;
}

std::vector<CrossDomainRow> cross_domain_eval(const PrmModel& model,
                                              const std::vector<Problem>& problems,
                                              const StochasticPolicy& policy,
                                              const Featurizer& featurizer,
                                              int n_candidates,
                                              AggregationRule aggregation,
                                              std::uint64_t seed) {
  if (model.feature_dim() != kFeatureDim) {
    throw std::invalid_argument(
        "cross_domain_eval: model feature schema mismatch (" +
        std::to_string(model.feature_dim()) + " != " +
        std::to_string(kFeatureDim) + ")");
  }
  if (problems.empty())
    throw std::invalid_argument("cross_domain_eval: no problems");

  std::size_t prm_hits = 0, maj_hits = 0, pass_hits = 0, pass1_hits = 0;
  for (const auto& problem : problems) {
    SearchConfig cfg;
    cfg.n = n_candidates;
    cfg.aggregation = aggregation;
    cfg.seed = seed;
    SearchRun bon = best_of_n(problem, policy, model, cfg, featurizer);
    prm_hits += bon.correct ? 1 : 0;
    SearchRun maj = majority_vote(problem, policy, cfg, featurizer, &model);
    maj_hits += maj.correct ? 1 : 0;
    bool any = false;
    for (const auto& c : bon.all_candidates) {
      any = any || *c.trace.final_answer == problem.gold_answer;
    }
    pass_hits += any ? 1 : 0;
    pass1_hits += !bon.all_candidates.empty() &&
                          *bon.all_candidates.front().trace.final_answer ==
                              problem.gold_answer
                      ? 1
                      : 0;
  }

  auto row = [&](const std::string& metric, int n, std::size_t hits) {
    double acc = static_cast<double>(hits) / static_cast<double>(problems.size());
    double se = std::sqrt(acc * (1.0 - acc) / static_cast<double>(problems.size()));
    return CrossDomainRow{metric, n, acc, se, problems.size()};
  };
  return {row("prm@N", n_candidates, prm_hits),
          row("maj@N", n_candidates, maj_hits),
          row("pass@N", n_candidates, pass_hits), row("pass@1", 1, pass1_hits)};
}

}  // namespace prmlab
