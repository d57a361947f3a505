#include "prmlab/annotate.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "prmlab/rng.hpp"

namespace prmlab {

namespace {

ReasoningTrace prefix_of(const ReasoningTrace& trace, int last_index) {
  ReasoningTrace p;
  p.problem_id = trace.problem_id;
  p.generator_seed = trace.generator_seed;
  p.steps.assign(trace.steps.begin(), trace.steps.begin() + last_index + 1);
  return p;
}

}  // namespace

StepLabel mc_estimate_step(const Problem& problem, const ReasoningTrace& prefix,
                           const RolloutOracleConfig& oracle,
                           BudgetLedger* ledger, int k_override) {
  if (prefix.steps.empty())
    throw std::invalid_argument("mc_estimate_step: empty prefix");
  if (prefix.steps.size() > problem.num_steps())
    throw std::invalid_argument("mc_estimate_step: prefix longer than T");
  int k = k_override > 0 ? k_override : oracle.k;
  if (k < 1) throw std::invalid_argument("mc_estimate_step: k < 1");

  StepLabel label;
  label.trace_id = prefix.trace_id();
  label.step_index = prefix.steps.back().index;
  label.rollout_count = k;

  if (prefix.steps.size() == problem.num_steps()) {
    // complete prefix: success is just answer equality, no rollouts needed
    label.mc_estimate =
        final_answer(problem, prefix) == problem.gold_answer ? 1.0 : 0.0;
  } else {
    int successes = 0;
    std::uint64_t fp = trace_fingerprint(prefix);
    for (int r = 0; r < k; ++r) {
      StochasticPolicy p = oracle.rollout_policy.with_seed(
          derive_seed(oracle.rollout_policy.rng_seed ^ fp, problem.id,
                      static_cast<std::uint64_t>(r)));
      try {
        ReasoningTrace completed = rollout(p, problem, prefix, ledger);
        if (*completed.final_answer == problem.gold_answer) ++successes;
      } catch (const BudgetExhausted& e) {
        throw PartialEstimateError(
            std::string("mc_estimate_step: ") + e.what(), r);
      }
    }
    label.mc_estimate = static_cast<double>(successes) / static_cast<double>(k);
  }

  label.hard_label = oracle.hard_label_rule == HardLabelRule::AnySuccess
                         ? label.mc_estimate > 0.0
                         : label.mc_estimate >= oracle.tau;
  return label;
}

int locate_first_error(const Problem& problem, const ReasoningTrace& trace,
                       const RolloutOracleConfig& oracle, BudgetLedger* ledger,
                       int* estimates_used) {
  if (!trace.complete())
    throw std::invalid_argument("locate_first_error: trace not complete");
  if (*trace.final_answer == problem.gold_answer)
    throw std::logic_error("locate_first_error: trace is correct");

  const int T = static_cast<int>(trace.steps.size());
  int used = 0;
  auto estimate = [&](int idx, int k_override) {
    ++used;
    return mc_estimate_step(problem, prefix_of(trace, idx), oracle, ledger,
                            k_override)
        .mc_estimate;
  };

  int lo = 0;
  const int max_rounds = 3;
  for (int round = 0; round < max_rounds; ++round) {
    if (lo > T - 1) break;
    // invariant: e(lo-1) >= tau believed, e(T-1) = 0 (wrong final answer)
    int a = lo, b = T - 1;
    while (a < b) {
      int mid = a + (b - a) / 2;
      double e = estimate(mid, 0);
      if (e < oracle.tau) {
        b = mid;
      } else {
        a = mid + 1;
      }
    }
    // confirm the collapse point with a doubled-rollout re-estimate
    double confirm = estimate(a, 2 * oracle.k);
    if (confirm < oracle.tau) {
      if (estimates_used) *estimates_used = used;
      return a;
    }
    lo = a + 1;  // monotonicity violated by MC noise; resume to the right
  }
  if (estimates_used) *estimates_used = used;
  throw InconsistentOracleError(
      "locate_first_error: no prefix collapses below tau for trace " +
      trace.trace_id());
}

AnnotatedTrace annotate_trace(const Problem& problem, const ReasoningTrace& trace,
                              const RolloutOracleConfig& oracle,
                              BudgetLedger* ledger) {
  if (!trace.complete())
    throw std::invalid_argument("annotate_trace: trace not complete");

  AnnotatedTrace out;
  out.trace = trace;
  out.annotator_id = oracle.annotator_id;

  bool correct = *trace.final_answer == problem.gold_answer;
  if (correct) {
    for (int i = 0; i < static_cast<int>(trace.steps.size()); ++i) {
      StepLabel l = mc_estimate_step(problem, prefix_of(trace, i), oracle, ledger);
      l.hard_label = true;  // the trace itself witnesses success
      out.labels.push_back(l);
    }
    out.first_error_index = std::nullopt;
    return out;
  }

  int j = locate_first_error(problem, trace, oracle, ledger);
  for (int i = 0; i <= j; ++i) {
    StepLabel l = mc_estimate_step(problem, prefix_of(trace, i), oracle, ledger);
    l.hard_label = i < j;  // split at the located error
    out.labels.push_back(l);
  }
  out.first_error_index = j;
  return out;
}

std::vector<AnnotatedTrace> ensemble_filter(
    const std::vector<AnnotatedTrace>& annotations, int m, FilterStats* stats,
    int window) {
  if (m < 1) throw std::invalid_argument("ensemble_filter: m < 1");

  std::vector<std::string> order;
  std::map<std::string, std::vector<const AnnotatedTrace*>> groups;
  for (const auto& a : annotations) {
    std::string id = a.trace.trace_id();
    auto [it, inserted] = groups.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(&a);
  }

  FilterStats local;
  std::vector<AnnotatedTrace> kept;
  for (const auto& id : order) {
    auto& group = groups[id];
    if (static_cast<int>(group.size()) != m) {
      throw std::invalid_argument("ensemble_filter: trace " + id + " has " +
                                  std::to_string(group.size()) +
                                  " annotations, expected " + std::to_string(m));
    }
    std::sort(group.begin(), group.end(),
              [](const AnnotatedTrace* a, const AnnotatedTrace* b) {
                return a->annotator_id < b->annotator_id;
              });
    for (std::size_t i = 1; i < group.size(); ++i) {
      if (group[i]->annotator_id == group[i - 1]->annotator_id)
        throw std::invalid_argument("ensemble_filter: duplicate annotator '" +
                                    group[i]->annotator_id + "' for trace " + id);
    }
    ++local.groups;

    bool agree;
    if (window == 0) {
      agree = std::all_of(group.begin(), group.end(), [&](const AnnotatedTrace* a) {
        return a->first_error_index == group[0]->first_error_index;
      });
    } else {
      bool any_none = std::any_of(group.begin(), group.end(), [](const AnnotatedTrace* a) {
        return !a->first_error_index.has_value();
      });
      bool all_none = std::all_of(group.begin(), group.end(), [](const AnnotatedTrace* a) {
        return !a->first_error_index.has_value();
      });
      if (all_none) {
        agree = true;
      } else if (any_none) {
        agree = false;
      } else {
        int lo = *group[0]->first_error_index, hi = lo;
        for (const auto* a : group) {
          lo = std::min(lo, *a->first_error_index);
          hi = std::max(hi, *a->first_error_index);
        }
        agree = hi - lo <= window;
      }
    }

    if (agree) {
      AnnotatedTrace consensus = *group.front();
      consensus.annotator_id = "consensus";
      kept.push_back(std::move(consensus));
      ++local.retained;
    } else {
      ++local.dropped;
    }
  }
  if (stats) *stats = local;
  return kept;
}

}  // namespace prmlab
