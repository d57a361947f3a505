#pragma once

/**
 * Core domain types shared by every module, plus JSONL (de)serialization
 * of traces and step labels.
 *
 * All types here are immutable after construction and safe to share across
 * threads. BudgetLedger is the one mutable type; its counters are atomic so
 * concurrent workers can charge it without locks.
 */

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace prmlab {

enum class Domain { MathChain, CodeAssembly };

std::string domain_name(Domain d);
Domain parse_domain(const std::string& s);

// ---------------------------------------------------------------------------
// Problem payloads (solvers and generators live in env)

enum class MathOp { Add, Sub, Mul };

struct MathChainSpec {
  std::int64_t start_value = 0;
  // (operator, operand) pairs; operand for Mul is always nonzero so a
  // corrupted running value can never coincidentally rejoin the true chain
  std::vector<std::pair<MathOp, std::int64_t>> ops;
};

struct CodeAssemblySpec {
  std::vector<std::string> target_program;           // one token per position
  std::vector<std::vector<std::string>> distractors; // per-position wrong tokens
};

struct Problem {
  std::string id;
  Domain domain = Domain::MathChain;
  std::variant<MathChainSpec, CodeAssemblySpec> spec;
  std::string gold_answer;  // canonical string, set by the environment solver

  std::size_t num_steps() const {
    if (domain == Domain::MathChain) return std::get<MathChainSpec>(spec).ops.size();
    return std::get<CodeAssemblySpec>(spec).target_program.size();
  }
};

// ---------------------------------------------------------------------------
// Traces

struct Step {
  int index = 0;
  // Domain action payload: asserted running value (math, decimal string) or
  // emitted token (code). A correction step re-derives the true state.
  std::string value;
  bool correction = false;
  std::string rendered;
};

struct ReasoningTrace {
  std::string problem_id;
  std::vector<Step> steps;
  std::optional<std::string> final_answer;  // present iff trace is complete
  std::uint64_t generator_seed = 0;

  bool complete() const { return final_answer.has_value(); }
  std::string trace_id() const {
    return problem_id + "/" + std::to_string(generator_seed);
  }
};

struct StepLabel {
  std::string trace_id;
  int step_index = 0;
  bool hard_label = false;   // y_t
  double mc_estimate = 0.0;  // fraction of rollouts reaching the gold answer
  int rollout_count = 1;
};

// Throws std::invalid_argument naming the offending field on violation.
void validate_trace(const ReasoningTrace& t);
void validate_label(const StepLabel& l);

// ---------------------------------------------------------------------------
// Budget accounting

class BudgetExhausted : public std::runtime_error {
 public:
  explicit BudgetExhausted(const std::string& what) : std::runtime_error(what) {}
};

struct BudgetCaps {
  std::optional<std::uint64_t> generation_units;
  std::optional<std::uint64_t> prm_eval_units;
  std::optional<std::uint64_t> wall_clock_ns;
};

/**
 * Counters: one generation unit per generated step, one PRM-eval unit per
 * forward pass. Counters are monotone nondecreasing; charging past a cap
 * throws BudgetExhausted and leaves the counter at the cap boundary value.
 *
 * Wall clock is measured against a start point fixed at construction (or the
 * last restart_clock()).
 */
class BudgetLedger {
 public:
  explicit BudgetLedger(BudgetCaps caps = {});
  BudgetLedger(const BudgetLedger& other);

  void charge_generation(std::uint64_t units = 1);
  void charge_prm_eval(std::uint64_t units = 1);
  // refresh wall_clock_ns from the monotonic clock; throws if past the cap
  void check_wall_clock();
  void restart_clock();

  std::uint64_t generation_units() const { return generation_.load(); }
  std::uint64_t prm_eval_units() const { return prm_eval_.load(); }
  std::uint64_t wall_clock_ns() const { return wall_clock_ns_.load(); }
  const BudgetCaps& caps() const { return caps_; }

  bool generation_exhausted() const;

 private:
  BudgetCaps caps_;
  std::atomic<std::uint64_t> generation_{0};
  std::atomic<std::uint64_t> prm_eval_{0};
  std::atomic<std::uint64_t> wall_clock_ns_{0};
  std::uint64_t clock_start_ns_ = 0;
};

// ---------------------------------------------------------------------------
// JSONL IO
//
// One UTF-8 JSON object per line. Errors name the file and the 1-based line
// number; a malformed or invariant-violating line aborts the whole read with
// no partial result.

void write_problems(const std::string& path, const std::vector<Problem>& problems);
std::vector<Problem> read_problems(const std::string& path);

void write_traces(const std::string& path, const std::vector<ReasoningTrace>& traces);
std::vector<ReasoningTrace> read_traces(const std::string& path);

void write_labels(const std::string& path, const std::vector<StepLabel>& labels);
std::vector<StepLabel> read_labels(const std::string& path);

}  // namespace prmlab
