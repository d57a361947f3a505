#include "prmlab/core.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace prmlab {

using nlohmann::json;

std::string domain_name(Domain d) {
  return d == Domain::MathChain ? "math_chain" : "code_assembly";
}

Domain parse_domain(const std::string& s) {
  if (s == "math_chain") return Domain::MathChain;
  if (s == "code_assembly") return Domain::CodeAssembly;
  throw std::invalid_argument("unknown domain: " + s);
}

void validate_trace(const ReasoningTrace& t) {
  if (t.problem_id.empty()) throw std::invalid_argument("trace: empty problem_id");
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (t.steps[i].index != static_cast<int>(i)) {
      throw std::invalid_argument("trace " + t.trace_id() + ": step index " +
                                  std::to_string(t.steps[i].index) +
                                  " at position " + std::to_string(i));
    }
  }
}

void validate_label(const StepLabel& l) {
  if (l.mc_estimate < 0.0 || l.mc_estimate > 1.0)
    throw std::invalid_argument("label " + l.trace_id + ": mc_estimate out of [0,1]");
  if (l.rollout_count < 1)
    throw std::invalid_argument("label " + l.trace_id + ": rollout_count < 1");
  if (l.step_index < 0)
    throw std::invalid_argument("label " + l.trace_id + ": negative step_index");
}

// ---------------------------------------------------------------------------
// BudgetLedger

namespace {
std::uint64_t now_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}
}  // namespace

BudgetLedger::BudgetLedger(BudgetCaps caps)
    : caps_(caps), clock_start_ns_(now_ns()) {}

BudgetLedger::BudgetLedger(const BudgetLedger& other)
    : caps_(other.caps_),
      generation_(other.generation_.load()),
      prm_eval_(other.prm_eval_.load()),
      wall_clock_ns_(other.wall_clock_ns_.load()),
      clock_start_ns_(other.clock_start_ns_) {}

void BudgetLedger::charge_generation(std::uint64_t units) {
  std::uint64_t after = generation_.fetch_add(units) + units;
  if (caps_.generation_units && after > *caps_.generation_units) {
    generation_.fetch_sub(after - *caps_.generation_units);
    throw BudgetExhausted("generation budget exhausted (" +
                          std::to_string(after) + " > " +
                          std::to_string(*caps_.generation_units) + ")");
  }
}

void BudgetLedger::charge_prm_eval(std::uint64_t units) {
  std::uint64_t after = prm_eval_.fetch_add(units) + units;
  if (caps_.prm_eval_units && after > *caps_.prm_eval_units) {
    prm_eval_.fetch_sub(after - *caps_.prm_eval_units);
    throw BudgetExhausted("prm eval budget exhausted (" + std::to_string(after) +
                          " > " + std::to_string(*caps_.prm_eval_units) + ")");
  }
}

void BudgetLedger::check_wall_clock() {
  std::uint64_t elapsed = now_ns() - clock_start_ns_;
  // keep the published counter monotone even with a restarted clock
  std::uint64_t prev = wall_clock_ns_.load();
  while (elapsed > prev && !wall_clock_ns_.compare_exchange_weak(prev, elapsed)) {
  }
  if (caps_.wall_clock_ns && elapsed > *caps_.wall_clock_ns) {
    throw BudgetExhausted("wall clock budget exhausted");
  }
}

void BudgetLedger::restart_clock() { clock_start_ns_ = now_ns(); }

bool BudgetLedger::generation_exhausted() const {
  return caps_.generation_units &&
         generation_.load() >= *caps_.generation_units;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

json step_to_json(const Step& s) {
  json j;
  j["index"] = s.index;
  j["value"] = s.value;
  if (s.correction) j["correction"] = true;
  j["rendered"] = s.rendered;
  return j;
}

Step step_from_json(const json& j) {
  Step s;
  s.index = j.at("index").get<int>();
  s.value = j.at("value").get<std::string>();
  s.correction = j.value("correction", false);
  s.rendered = j.value("rendered", std::string{});
  if (s.index < 0) throw std::invalid_argument("negative step index");
  return s;
}

json trace_to_json(const ReasoningTrace& t) {
  json j;
  j["problem_id"] = t.problem_id;
  j["generator_seed"] = t.generator_seed;
  json steps = json::array();
  for (const auto& s : t.steps) steps.push_back(step_to_json(s));
  j["steps"] = std::move(steps);
  if (t.final_answer) j["final_answer"] = *t.final_answer;
  return j;
}

ReasoningTrace trace_from_json(const json& j) {
  ReasoningTrace t;
  t.problem_id = j.at("problem_id").get<std::string>();
  t.generator_seed = j.at("generator_seed").get<std::uint64_t>();
  for (const auto& js : j.at("steps")) t.steps.push_back(step_from_json(js));
  if (j.contains("final_answer")) t.final_answer = j.at("final_answer").get<std::string>();
  validate_trace(t);
  return t;
}

json label_to_json(const StepLabel& l) {
  json j;
  j["trace_id"] = l.trace_id;
  j["step_index"] = l.step_index;
  j["hard_label"] = l.hard_label;
  j["mc_estimate"] = l.mc_estimate;
  j["rollout_count"] = l.rollout_count;
  return j;
}

StepLabel label_from_json(const json& j) {
  StepLabel l;
  l.trace_id = j.at("trace_id").get<std::string>();
  l.step_index = j.at("step_index").get<int>();
  l.hard_label = j.at("hard_label").get<bool>();
  l.mc_estimate = j.at("mc_estimate").get<double>();
  l.rollout_count = j.at("rollout_count").get<int>();
  validate_label(l);
  return l;
}

template <typename T, typename ToJson>
void write_jsonl(const std::string& path, const std::vector<T>& items, ToJson to_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& item : items) {
    out << to_json(item).dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

template <typename T, typename FromJson>
std::vector<T> read_jsonl(const std::string& path, FromJson from_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<T> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      items.push_back(from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

const char* math_op_sym(MathOp op) {
  return op == MathOp::Add ? "+" : op == MathOp::Sub ? "-" : "*";
}

MathOp parse_math_op(const std::string& s) {
  if (s == "+") return MathOp::Add;
  if (s == "-") return MathOp::Sub;
  if (s == "*") return MathOp::Mul;
  throw std::invalid_argument("unknown math op: " + s);
}

json problem_to_json(const Problem& p) {
  json j;
  j["id"] = p.id;
  j["domain"] = domain_name(p.domain);
  j["gold_answer"] = p.gold_answer;
  if (p.domain == Domain::MathChain) {
    const auto& spec = std::get<MathChainSpec>(p.spec);
    json ops = json::array();
    for (const auto& [op, operand] : spec.ops)
      ops.push_back({math_op_sym(op), operand});
    j["spec"] = {{"start_value", spec.start_value}, {"ops", std::move(ops)}};
  } else {
    const auto& spec = std::get<CodeAssemblySpec>(p.spec);
    j["spec"] = {{"target_program", spec.target_program},
                 {"distractors", spec.distractors}};
  }
  return j;
}

Problem problem_from_json(const json& j) {
  Problem p;
  p.id = j.at("id").get<std::string>();
  p.domain = parse_domain(j.at("domain").get<std::string>());
  p.gold_answer = j.at("gold_answer").get<std::string>();
  const auto& js = j.at("spec");
  if (p.domain == Domain::MathChain) {
    MathChainSpec spec;
    spec.start_value = js.at("start_value").get<std::int64_t>();
    for (const auto& op : js.at("ops")) {
      spec.ops.emplace_back(parse_math_op(op.at(0).get<std::string>()),
                            op.at(1).get<std::int64_t>());
    }
    p.spec = std::move(spec);
  } else {
    CodeAssemblySpec spec;
    spec.target_program = js.at("target_program").get<std::vector<std::string>>();
    spec.distractors =
        js.at("distractors").get<std::vector<std::vector<std::string>>>();
    p.spec = std::move(spec);
  }
  return p;
}

}  // namespace

void write_problems(const std::string& path, const std::vector<Problem>& problems) {
  write_jsonl(path, problems, problem_to_json);
}

std::vector<Problem> read_problems(const std::string& path) {
  return read_jsonl<Problem>(path, problem_from_json);
}

void write_traces(const std::string& path, const std::vector<ReasoningTrace>& traces) {
  write_jsonl(path, traces, trace_to_json);
}

std::vector<ReasoningTrace> read_traces(const std::string& path) {
  return read_jsonl<ReasoningTrace>(path, trace_from_json);
}

void write_labels(const std::string& path, const std::vector<StepLabel>& labels) {
  write_jsonl(path, labels, label_to_json);
}

std::vector<StepLabel> read_labels(const std::string& path) {
  return read_jsonl<StepLabel>(path, label_from_json);
}

}  // namespace prmlab
