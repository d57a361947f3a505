#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "prmlab/env.hpp"
#include "prmlab/prm.hpp"
#include "prmlab/rng.hpp"
#include "prmlab/search.hpp"

using namespace prmlab;

namespace {

// single-hidden-unit scorer reading the exact consistency channel: with a
// sigma=0 featurizer it scores verified steps high and wrong steps low
PrmModel oracle_model() {
  PrmModel m(kFeatureDim, 1);
  auto& t = m.params();
  t[0] = 6.0;   // w1 on channel 0
  t[12] = -3.0; // b1
  t[13] = 6.0;  // w2
  t[14] = 0.0;  // b2
  return m;
}

Featurizer exact_featurizer() { return Featurizer{0.0, 0}; }

Problem small_math(std::uint64_t seed, int steps = 4) {
  EnvParams env;
  env.min_steps = steps;
  env.max_steps = steps;
  return generate_problems(Domain::MathChain, 1, seed, env)[0];
}

SearchConfig base_config(Strategy s, std::uint64_t seed) {
  SearchConfig c;
  c.strategy = s;
  c.seed = seed;
  return c;
}

// every complete trace reachable through candidate_steps expansion
void enumerate_all(const Problem& p, const ReasoningTrace& prefix,
                   std::vector<ReasoningTrace>& out) {
  if (prefix.steps.size() == p.num_steps()) {
    ReasoningTrace done = prefix;
    done.final_answer = final_answer(p, done);
    out.push_back(done);
    return;
  }
  for (const auto& c : candidate_steps(p, prefix)) {
    ReasoningTrace next = prefix;
    next.steps.push_back(c);
    enumerate_all(p, next, out);
  }
}

}  // namespace

TEST_CASE("uct reduces to Q at zero exploration") {
  CHECK(uct(0.37, 100, 3, 0.0) == 0.37);
  CHECK(uct(-1.5, 7, 1, 0.0) == -1.5);
}

TEST_CASE("uct matches the worked value") {
  // 0.5 + 1.41 * sqrt(ln 10 / 2) = 2.0128...
  CHECK(uct(0.5, 10, 2, 1.41) == doctest::Approx(2.0128).epsilon(1e-3));
}

TEST_CASE("unvisited edges dominate any visited edge") {
  CHECK(uct(0.0, 10, 0, 1.0) == std::numeric_limits<double>::infinity());
  CHECK(uct(0.0, 10, 0, 1.0) > uct(1e9, 10, 1, 1.0));
  CHECK_THROWS_AS(uct(0.5, 0, 1, 1.0), std::invalid_argument);
}

TEST_CASE("best_of_n selects the argmax candidate") {
  Problem p = small_math(3);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::BestOfN, 11);
  cfg.n = 12;
  SearchRun run = best_of_n(p, {0.4, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  REQUIRE(run.all_candidates.size() == 12);
  double best = -1;
  for (const auto& c : run.all_candidates) best = std::max(best, c.score);
  bool found = false;
  for (const auto& c : run.all_candidates) {
    if (c.score == best && !found) {
      CHECK(*run.selected.final_answer == *c.trace.final_answer);
      found = true;  // lowest-index winner among ties
    }
  }
  CHECK(run.generation_units == 12 * p.num_steps());
  CHECK(run.prm_eval_units == 12 * p.num_steps());
  CHECK(!run.truncated);
}

TEST_CASE("best_of_n with n=1 degenerates to a single rollout") {
  Problem p = small_math(5);
  SearchConfig cfg = base_config(Strategy::BestOfN, 4);
  cfg.n = 1;
  PrmModel m = oracle_model();
  SearchRun run = best_of_n(p, {0.3, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  CHECK(run.all_candidates.size() == 1);
  CHECK(*run.selected.final_answer == *run.all_candidates[0].trace.final_answer);
}

TEST_CASE("best_of_n argmax is invariant under monotone score transforms") {
  // the winner depends only on score order, so scoring through a strictly
  // increasing transform of the aggregate must pick the same candidate
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores;
    for (int i = 0; i < 10; ++i) scores.push_back(rng.uniform());
    auto argmax = [](const std::vector<double>& v) {
      return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    std::vector<double> warped;
    for (double s : scores) warped.push_back(std::exp(3.0 * s) - 0.5);
    CHECK(argmax(scores) == argmax(warped));
  }
}

TEST_CASE("beam with K=1 is greedy") {
  Problem p = small_math(7, 4);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::Beam, 2);
  cfg.beam_width = 1;
  cfg.max_children = 100;  // full expansion at every depth
  SearchRun run = beam_search(p, {0.2, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  REQUIRE(run.all_candidates.size() == 1);
  // greedy under the oracle scorer takes the verified step every time
  CHECK(*run.selected.final_answer == p.gold_answer);
  CHECK(run.correct);
}

TEST_CASE("saturated beam equals exhaustive enumeration") {
  PrmModel m = oracle_model();
  Featurizer fz = exact_featurizer();
  Rng seeds(19);
  for (int trial = 0; trial < 100; ++trial) {
    EnvParams env;
    env.min_steps = 3;
    env.max_steps = 3;
    env.distractors_per_position = 2;
    Domain d = trial % 2 ? Domain::CodeAssembly : Domain::MathChain;
    Problem p = generate_problems(d, 1, seeds.next_u64(), env)[0];

    SearchConfig cfg = base_config(Strategy::Beam, 5);
    cfg.beam_width = 1000;  // K >= total leaf count (<= 4^3)
    cfg.max_children = 100;
    SearchRun run = beam_search(p, {0.2, 0.0, 1.0, 0}, m, cfg, fz);

    std::vector<ReasoningTrace> all;
    enumerate_all(p, {p.id}, all);
    double best = -1;
    const ReasoningTrace* winner = nullptr;
    for (const auto& t : all) {
      double agg = score_trace(m, p, t, cfg.aggregation, fz).aggregate;
      if (agg > best) {
        best = agg;
        winner = &t;
      }
    }
    REQUIRE(winner != nullptr);
    CHECK(run.all_candidates.size() == all.size());
    CHECK(*run.selected.final_answer == *winner->final_answer);
    CHECK(score_trace(m, p, run.selected, cfg.aggregation, fz).aggregate == best);
  }
}

TEST_CASE("mcts visits concentrate on the better arm") {
  Problem p = small_math(23, 5);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::Mcts, 6);
  cfg.max_children = 4;
  cfg.mcts.iterations = 200;
  cfg.mcts.max_children = 4;
  SearchRun run = mcts(p, {0.3, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  CHECK(run.correct);
  CHECK(*run.selected.final_answer == p.gold_answer);
}

TEST_CASE("mcts iteration count is conserved in root visits") {
  Problem p = small_math(29, 4);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::Mcts, 9);
  cfg.mcts.iterations = 64;
  SearchRun run = mcts(p, {0.3, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  // every iteration completes one simulation: one candidate recorded each
  CHECK(run.all_candidates.size() == 64);
}

TEST_CASE("mcts is deterministic for a fixed seed") {
  Problem p = small_math(31, 5);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::Mcts, 12);
  cfg.mcts.iterations = 50;
  SearchRun a = mcts(p, {0.3, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  SearchRun b = mcts(p, {0.3, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  CHECK(*a.selected.final_answer == *b.selected.final_answer);
  CHECK(a.generation_units == b.generation_units);
  REQUIRE(a.all_candidates.size() == b.all_candidates.size());
  for (std::size_t i = 0; i < a.all_candidates.size(); ++i)
    CHECK(a.all_candidates[i].score == b.all_candidates[i].score);
}

TEST_CASE("majority vote picks the modal answer") {
  Problem p = small_math(37, 4);
  SearchConfig cfg = base_config(Strategy::MajorityVote, 15);
  cfg.n = 31;
  // low error rate: the gold answer is the clear mode
  SearchRun run = majority_vote(p, {0.05, 0.0, 1.0, 0}, cfg, exact_featurizer());
  CHECK(*run.selected.final_answer == p.gold_answer);
  CHECK(run.correct);
  std::map<std::string, int> tally;
  for (const auto& c : run.all_candidates) ++tally[*c.trace.final_answer];
  int mode = 0;
  for (const auto& [ans, n] : tally) mode = std::max(mode, n);
  CHECK(tally[*run.selected.final_answer] == mode);
}

TEST_CASE("majority vote breaks ties by mean scorer value") {
  Problem p = small_math(41, 4);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::MajorityVote, 16);
  cfg.n = 2;  // two candidates, frequently a 1-1 tie
  StochasticPolicy policy{0.5, 0.0, 1.0, 0};
  bool saw_tie = false;
  for (std::uint64_t s = 0; s < 30 && !saw_tie; ++s) {
    cfg.seed = 100 + s;
    SearchRun run = majority_vote(p, policy, cfg, exact_featurizer(), &m);
    const auto& a = run.all_candidates[0];
    const auto& b = run.all_candidates[1];
    if (*a.trace.final_answer == *b.trace.final_answer) continue;
    saw_tie = true;
    const auto& expect = a.score >= b.score ? a : b;
    CHECK(*run.selected.final_answer == *expect.trace.final_answer);
  }
  CHECK(saw_tie);
}

TEST_CASE("generation cap truncates best_of_n mid-run") {
  Problem p = small_math(43, 6);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::BestOfN, 17);
  cfg.n = 10;
  cfg.caps.generation_units = 3 * 6 + 2;  // three full candidates plus change
  SearchRun run = best_of_n(p, {0.2, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  CHECK(run.truncated);
  CHECK(run.all_candidates.size() == 3);
  CHECK(run.generation_units <= *cfg.caps.generation_units);
  CHECK(run.selected.complete());
}

TEST_CASE("a zero generation budget yields an empty truncated run") {
  Problem p = small_math(47, 4);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::BestOfN, 18);
  cfg.caps.generation_units = 0;
  SearchRun run = best_of_n(p, {0.2, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  CHECK(run.truncated);
  CHECK(run.all_candidates.empty());
  CHECK(!run.correct);
}

TEST_CASE("mcts respects the generation cap") {
  // the first iteration alone costs expansion + a full simulation, so a
  // 10-unit cap trips almost immediately; later iterations that only revisit
  // existing nodes are free and must not be counted
  Problem p = small_math(53, 5);
  PrmModel m = oracle_model();
  SearchConfig cfg = base_config(Strategy::Mcts, 19);
  cfg.mcts.iterations = 500;
  cfg.caps.generation_units = 10;
  SearchRun run = mcts(p, {0.3, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
  CHECK(run.truncated);
  CHECK(run.generation_units <= 10);
  CHECK(run.all_candidates.size() < 500);
  CHECK(run.selected.complete());
}

TEST_CASE("run_strategy dispatches on the configured strategy") {
  Problem p = small_math(59, 4);
  PrmModel m = oracle_model();
  for (Strategy s : {Strategy::BestOfN, Strategy::Beam, Strategy::Mcts,
                     Strategy::MajorityVote}) {
    SearchConfig cfg = base_config(s, 23);
    cfg.mcts.iterations = 16;
    SearchRun run = run_strategy(p, {0.2, 0.0, 1.0, 0}, m, cfg, exact_featurizer());
    CHECK(run.strategy == s);
    CHECK(run.selected.complete());
  }
}

TEST_CASE("strategy names round-trip") {
  for (Strategy s : {Strategy::BestOfN, Strategy::Beam, Strategy::Mcts,
                     Strategy::MajorityVote})
    CHECK(parse_strategy(strategy_name(s)) == s);
  CHECK_THROWS_AS(parse_strategy("dfs"), std::invalid_argument);
}

TEST_CASE("cell_config sizes candidate counts to the budget") {
  MatrixParams params;
  SearchConfig bon = cell_config(Strategy::BestOfN, 64, 8, params);
  CHECK(bon.n == 8);  // 64 units / 8 steps
  CHECK(*bon.caps.generation_units == 64);
  SearchConfig mv = cell_config(Strategy::MajorityVote, 64, 8, params);
  CHECK(mv.n == 8);
  SearchConfig beam = cell_config(Strategy::Beam, 96, 8, params);
  CHECK(beam.beam_width >= 1);
  SearchConfig mc = cell_config(Strategy::Mcts, 64, 8, params);
  CHECK(mc.mcts.iterations >= 1);
}

TEST_CASE("run_matrix rows are deterministic and worker-count independent") {
  EnvParams env;
  env.min_steps = 4;
  env.max_steps = 5;
  auto problems = generate_problems(Domain::MathChain, 30, 61, env);
  PrmModel m = oracle_model();
  MatrixParams params;
  params.strategies = {Strategy::BestOfN, Strategy::MajorityVote};
  params.budgets = {16, 32};
  params.policy = {0.2, 0.0, 1.0, 0};
  params.seed = 5;
  params.workers = 1;
  auto rows1 = run_matrix(problems, m, exact_featurizer(), params);
  params.workers = 4;
  auto rows4 = run_matrix(problems, m, exact_featurizer(), params);
  REQUIRE(rows1.size() == 4);
  REQUIRE(rows4.size() == 4);
  for (std::size_t i = 0; i < rows1.size(); ++i) {
    CHECK(rows1[i].strategy == rows4[i].strategy);
    CHECK(rows1[i].budget_units == rows4[i].budget_units);
    CHECK(rows1[i].accuracy == rows4[i].accuracy);
    CHECK(rows1[i].n_problems == 30);
  }
  // more budget cannot hurt the oracle-scored best_of_n here
  CHECK(rows1[1].accuracy >= rows1[0].accuracy - rows1[0].se);
}
