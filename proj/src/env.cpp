#include "prmlab/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "prmlab/rng.hpp"

namespace prmlab {

namespace {

std::int64_t apply_op(MathOp op, std::int64_t v, std::int64_t operand) {
  switch (op) {
    case MathOp::Add: return v + operand;
    case MathOp::Sub: return v - operand;
    case MathOp::Mul: return v * operand;
  }
  return v;
}

// gold running values; gold[t] = state after ops[0..t]
std::vector<std::int64_t> gold_chain(const MathChainSpec& spec) {
  std::vector<std::int64_t> gold;
  gold.reserve(spec.ops.size());
  std::int64_t v = spec.start_value;
  for (const auto& [op, operand] : spec.ops) {
    v = apply_op(op, v, operand);
    gold.push_back(v);
  }
  return gold;
}

std::int64_t parse_value(const std::string& s) { return std::stoll(s); }

// distractor deltas for a math position, pure in (problem id, position)
std::vector<std::int64_t> math_distractor_deltas(const std::string& problem_id,
                                                 int position, int count) {
  Rng rng(derive_seed(hash_str(problem_id), 0x6d617468ULL, position));
  std::vector<std::int64_t> deltas;
  while (static_cast<int>(deltas.size()) < count) {
    std::int64_t mag = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
    std::int64_t d = rng.bernoulli(0.5) ? mag : -mag;
    if (std::find(deltas.begin(), deltas.end(), d) == deltas.end())
      deltas.push_back(d);
  }
  return deltas;
}

std::string token_name(int i) {
  std::string s = "t";
  if (i < 10) s += '0';
  return s + std::to_string(i);
}

int token_index(const std::string& tok) {
  return std::stoi(tok.substr(1));
}

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

// token sequence implied by a code trace; a correction step repairs every
// earlier wrong position before emitting its own token
std::vector<std::string> build_program(const CodeAssemblySpec& spec,
                                       const ReasoningTrace& trace) {
  std::vector<std::string> prog;
  for (const auto& s : trace.steps) {
    if (s.correction) {
      for (std::size_t i = 0; i < prog.size(); ++i) {
        prog[i] = spec.target_program[i];
      }
    }
    prog.push_back(s.value);
  }
  return prog;
}

Step make_step(int index, std::string value, bool correction,
               std::string rendered) {
  Step s;
  s.index = index;
  s.value = std::move(value);
  s.correction = correction;
  s.rendered = std::move(rendered);
  return s;
}

std::string render_math(int index, const MathChainSpec& spec,
                        const std::string& value, bool correction) {
  const auto& [op, operand] = spec.ops[index];
  const char* sym = op == MathOp::Add ? "+" : op == MathOp::Sub ? "-" : "*";
  std::string r = "step " + std::to_string(index) + ": " + sym + " " +
                  std::to_string(operand) + " => " + value;
  if (correction) r += " (corrected)";
  return r;
}

}  // namespace

std::uint64_t trace_fingerprint(const ReasoningTrace& prefix) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (const auto& s : prefix.steps) {
    h = mix64(h ^ hash_str(s.value) ^ (s.correction ? 0x55ULL : 0));
  }
  return mix64(h ^ prefix.steps.size());
}

std::vector<Problem> generate_problems(Domain domain, int count,
                                       std::uint64_t seed,
                                       const EnvParams& params) {
  if (count < 1) throw std::invalid_argument("generate_problems: count < 1");
  if (params.min_steps < 3 || params.max_steps > 20 ||
      params.min_steps > params.max_steps) {
    throw std::invalid_argument("generate_problems: step range outside [3,20]");
  }
  std::vector<Problem> problems;
  problems.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, domain_name(domain), static_cast<std::uint64_t>(i)));
    int t = params.min_steps +
            static_cast<int>(rng.uniform_int(params.max_steps - params.min_steps + 1));
    Problem p;
    p.id = domain_name(domain) + "-" + std::to_string(seed) + "-" + std::to_string(i);
    p.domain = domain;
    if (domain == Domain::MathChain) {
      MathChainSpec spec;
      spec.start_value = static_cast<std::int64_t>(rng.uniform_int(41)) - 20;
      std::int64_t v = spec.start_value;
      for (int s = 0; s < t; ++s) {
        bool can_mul = std::llabs(v) * 3 + 9 < 100000000;
        if (can_mul && rng.bernoulli(0.15)) {
          std::int64_t operand = rng.bernoulli(0.5) ? 2 : 3;
          spec.ops.emplace_back(MathOp::Mul, operand);
        } else {
          std::int64_t operand = 1 + static_cast<std::int64_t>(rng.uniform_int(9));
          spec.ops.emplace_back(rng.bernoulli(0.5) ? MathOp::Add : MathOp::Sub,
                                operand);
        }
        v = apply_op(spec.ops.back().first, v, spec.ops.back().second);
      }
      p.gold_answer = std::to_string(v);
      p.spec = std::move(spec);
    } else {
      CodeAssemblySpec spec;
      for (int s = 0; s < t; ++s) {
        int correct = static_cast<int>(rng.uniform_int(params.alphabet_size));
        spec.target_program.push_back(token_name(correct));
        std::vector<std::string> wrong;
        while (static_cast<int>(wrong.size()) < params.distractors_per_position) {
          int d = static_cast<int>(rng.uniform_int(params.alphabet_size));
          if (d == correct) continue;
          std::string tok = token_name(d);
          if (std::find(wrong.begin(), wrong.end(), tok) == wrong.end())
            wrong.push_back(tok);
        }
        spec.distractors.push_back(std::move(wrong));
      }
      p.gold_answer = join(spec.target_program);
      p.spec = std::move(spec);
    }
    problems.push_back(std::move(p));
  }
  return problems;
}

std::string prefix_state(const Problem& problem, const ReasoningTrace& prefix) {
  if (problem.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(problem.spec);
    if (prefix.steps.empty()) return std::to_string(spec.start_value);
    return prefix.steps.back().value;
  }
  return join(build_program(std::get<CodeAssemblySpec>(problem.spec), prefix));
}

bool prefix_corrupted(const Problem& problem, const ReasoningTrace& prefix) {
  if (prefix.steps.empty()) return false;
  if (problem.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(problem.spec);
    auto gold = gold_chain(spec);
    std::size_t t = prefix.steps.size();
    return parse_value(prefix.steps.back().value) != gold[t - 1];
  }
  const auto& spec = std::get<CodeAssemblySpec>(problem.spec);
  auto prog = build_program(spec, prefix);
  for (std::size_t i = 0; i < prog.size(); ++i) {
    if (prog[i] != spec.target_program[i]) return true;
  }
  return false;
}

Step policy_step(const StochasticPolicy& policy, const Problem& problem,
                 const ReasoningTrace& prefix, std::uint64_t draw_index) {
  std::size_t t = prefix.steps.size();
  if (t >= problem.num_steps()) {
    throw std::logic_error("policy_step: prefix already complete for " + problem.id);
  }
  Rng rng(derive_seed(derive_seed(policy.rng_seed, problem.id, draw_index),
                      trace_fingerprint(prefix)));
  bool corrupted = prefix_corrupted(problem, prefix);

  if (problem.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(problem.spec);
    auto gold = gold_chain(spec);
    if (corrupted && rng.bernoulli(policy.recovery_rate)) {
      std::string v = std::to_string(gold[t]);
      return make_step(static_cast<int>(t), v, true,
                       render_math(static_cast<int>(t), spec, v, true));
    }
    std::int64_t prev = prefix.steps.empty() ? spec.start_value
                                             : parse_value(prefix.steps.back().value);
    std::int64_t consistent = apply_op(spec.ops[t].first, prev, spec.ops[t].second);
    std::int64_t value = consistent;
    if (rng.bernoulli(policy.error_rate)) {
      auto deltas = math_distractor_deltas(problem.id, static_cast<int>(t), 3);
      // temperature-weighted pick over the delta list
      std::vector<double> w(deltas.size());
      double total = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(-static_cast<double>(i) / std::max(policy.spread, 1e-6));
        total += w[i];
      }
      double u = rng.uniform() * total;
      std::size_t pick = 0;
      for (; pick + 1 < w.size(); ++pick) {
        if (u < w[pick]) break;
        u -= w[pick];
      }
      value = consistent + deltas[pick];
    }
    std::string v = std::to_string(value);
    return make_step(static_cast<int>(t), v, false,
                     render_math(static_cast<int>(t), spec, v, false));
  }

  const auto& spec = std::get<CodeAssemblySpec>(problem.spec);
  if (corrupted && rng.bernoulli(policy.recovery_rate)) {
    return make_step(static_cast<int>(t), spec.target_program[t], true,
                     "emit " + spec.target_program[t] + " (corrected)");
  }
  std::string tok = spec.target_program[t];
  if (rng.bernoulli(policy.error_rate)) {
    const auto& wrong = spec.distractors[t];
    std::vector<double> w(wrong.size());
    double total = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = std::exp(-static_cast<double>(i) / std::max(policy.spread, 1e-6));
      total += w[i];
    }
    double u = rng.uniform() * total;
    std::size_t pick = 0;
    for (; pick + 1 < w.size(); ++pick) {
      if (u < w[pick]) break;
      u -= w[pick];
    }
    tok = wrong[pick];
  }
  return make_step(static_cast<int>(t), tok, false, "emit " + tok);
}

ReasoningTrace rollout(const StochasticPolicy& policy, const Problem& problem,
                       ReasoningTrace prefix, BudgetLedger* ledger) {
  prefix.problem_id = problem.id;
  while (prefix.steps.size() < problem.num_steps()) {
    if (ledger) ledger->charge_generation(1);
    prefix.steps.push_back(policy_step(policy, problem, prefix));
  }
  prefix.final_answer = final_answer(problem, prefix);
  return prefix;
}

bool verify_step(const Problem& problem, const ReasoningTrace& prefix,
                 const Step& step) {
  std::size_t t = prefix.steps.size();
  if (problem.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(problem.spec);
    auto gold = gold_chain(spec);
    if (t >= gold.size()) throw std::invalid_argument("verify_step: step beyond T");
    return parse_value(step.value) == gold[t];
  }
  const auto& spec = std::get<CodeAssemblySpec>(problem.spec);
  if (t >= spec.target_program.size())
    throw std::invalid_argument("verify_step: step beyond T");
  // a step checks out only if the program assembled so far still matches the
  // target prefix, so an uncorrected earlier mistake taints later steps
  ReasoningTrace extended = prefix;
  extended.steps.push_back(step);
  auto prog = build_program(spec, extended);
  for (std::size_t i = 0; i < prog.size(); ++i) {
    if (prog[i] != spec.target_program[i]) return false;
  }
  return true;
}

int first_error_index(const Problem& problem, const ReasoningTrace& trace) {
  ReasoningTrace prefix;
  prefix.problem_id = trace.problem_id;
  for (const auto& s : trace.steps) {
    if (!verify_step(problem, prefix, s)) return s.index;
    prefix.steps.push_back(s);
  }
  return -1;
}

std::string final_answer(const Problem& problem, const ReasoningTrace& trace) {
  if (trace.steps.size() != problem.num_steps()) {
    throw std::logic_error("final_answer: incomplete trace for " + problem.id);
  }
  if (problem.domain == Domain::MathChain) {
    return trace.steps.back().value;
  }
  return join(build_program(std::get<CodeAssemblySpec>(problem.spec), trace));
}

std::vector<Step> candidate_steps(const Problem& problem,
                                  const ReasoningTrace& prefix) {
  std::size_t t = prefix.steps.size();
  if (t >= problem.num_steps()) {
    throw std::logic_error("candidate_steps: prefix already complete");
  }
  bool corrupted = prefix_corrupted(problem, prefix);
  std::vector<Step> out;
  auto push_unique = [&](Step s) {
    for (const auto& e : out) {
      if (e.value == s.value) return;
    }
    out.push_back(std::move(s));
  };

  if (problem.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(problem.spec);
    auto gold = gold_chain(spec);
    std::int64_t prev = prefix.steps.empty() ? spec.start_value
                                             : parse_value(prefix.steps.back().value);
    std::int64_t consistent = apply_op(spec.ops[t].first, prev, spec.ops[t].second);
    std::string v = std::to_string(consistent);
    push_unique(make_step(static_cast<int>(t), v, false,
                          render_math(static_cast<int>(t), spec, v, false)));
    for (std::int64_t d : math_distractor_deltas(problem.id, static_cast<int>(t), 3)) {
      std::string dv = std::to_string(consistent + d);
      push_unique(make_step(static_cast<int>(t), dv, false,
                            render_math(static_cast<int>(t), spec, dv, false)));
    }
    if (corrupted) {
      std::string cv = std::to_string(gold[t]);
      push_unique(make_step(static_cast<int>(t), cv, true,
                            render_math(static_cast<int>(t), spec, cv, true)));
    }
  } else {
    const auto& spec = std::get<CodeAssemblySpec>(problem.spec);
    push_unique(make_step(static_cast<int>(t), spec.target_program[t], false,
                          "emit " + spec.target_program[t]));
    for (const auto& tok : spec.distractors[t]) {
      push_unique(make_step(static_cast<int>(t), tok, false, "emit " + tok));
    }
    if (corrupted) {
      push_unique(make_step(static_cast<int>(t), spec.target_program[t], true,
                            "emit " + spec.target_program[t] + " (corrected)"));
    }
  }
  return out;
}

StepFeatures extract_features(const Problem& problem,
                              const ReasoningTrace& prefix, const Step& step,
                              double sigma, std::uint64_t noise_seed) {
  std::size_t t = prefix.steps.size();
  std::size_t total = problem.num_steps();
  bool ok = verify_step(problem, prefix, step);
  double bit = ok ? 1.0 : 0.0;

  Rng rng(derive_seed(derive_seed(noise_seed, problem.id, t),
                      hash_str(step.value) ^ (step.correction ? 0x1ULL : 0)));
  auto squash = [](double x) { return std::clamp(x, 0.0, 1.0); };

  StepFeatures f;
  f.v[0] = squash(bit + sigma * rng.normal());
  f.v[1] = static_cast<double>(t) / static_cast<double>(total);
  // content channels describe the reference solution at this position, so
  // every candidate step at a given position shares them
  if (problem.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(problem.spec);
    auto gold = gold_chain(spec);
    double mag = std::log1p(std::fabs(static_cast<double>(gold[t])));
    f.v[2] = mag / std::log1p(1e9);
    f.v[4] = 1.0;
    f.v[8] = static_cast<double>(spec.ops[t].first) / 2.0;
  } else {
    const auto& spec = std::get<CodeAssemblySpec>(problem.spec);
    f.v[2] = std::log1p(static_cast<double>(token_index(spec.target_program[t]))) /
             std::log1p(16.0);
    f.v[5] = 1.0;
    f.v[8] = static_cast<double>(token_index(spec.target_program[t])) /
             static_cast<double>(std::max<std::size_t>(16, spec.target_program.size()));
  }
  f.v[3] = step.correction ? 1.0 : 0.0;
  // noisy soundness probe: is the trace still on track after this step?
  ReasoningTrace extended = prefix;
  extended.steps.push_back(step);
  double sound = prefix_corrupted(problem, extended) ? 0.0 : 1.0;
  f.v[6] = squash(sound + 2.0 * sigma * rng.normal());
  f.v[7] = (t + 1 == total) ? 1.0 : 0.0;
  f.v[9] = rng.uniform();
  f.v[10] = static_cast<double>(total) / 20.0;
  f.v[11] = 1.0;
  return f;
}

}  // namespace prmlab
