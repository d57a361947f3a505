#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "prmlab/env.hpp"
#include "prmlab/prm.hpp"
#include "prmlab/rng.hpp"

using namespace prmlab;

namespace {

std::vector<double> features_of(Rng& rng) {
  std::vector<double> x(kFeatureDim);
  for (auto& v : x) v = rng.normal();
  return x;
}

PrmModel random_model(int hidden, std::uint64_t seed) {
  PrmModel m(kFeatureDim, hidden);
  Rng rng(seed);
  for (auto& t : m.params()) t = 0.4 * rng.normal();
  return m;
}

// Training set separable on channel 0: positives near 1, negatives near 0.
std::vector<TrainSample> synthetic_dataset(int n, double sigma, std::uint64_t seed) {
  std::vector<TrainSample> data;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    TrainSample s;
    s.label = rng.bernoulli(0.5);
    double bit = s.label ? 1.0 : 0.0;
    s.features.v[0] = std::clamp(bit + sigma * rng.normal(), 0.0, 1.0);
    s.features.v[6] = std::clamp(bit + 2 * sigma * rng.normal(), 0.0, 1.0);
    s.features.v[1] = rng.uniform();
    s.features.v[9] = rng.uniform();
    s.features.v[11] = 1.0;
    data.push_back(s);
  }
  return data;
}

}  // namespace

TEST_CASE("bce of a 0.5 prediction on a positive is ln 2") {
  CHECK(std::abs(bce_loss({0.5}, {1.0}) - std::log(2.0)) < 1e-9);
  CHECK(std::abs(bce_loss({0.5}, {0.0}) - std::log(2.0)) < 1e-9);
}

TEST_CASE("bce matches a hand-computed two-element case") {
  // -(log 0.9 + log 0.8) / 2 = 0.1642519...
  CHECK(bce_loss({0.9, 0.2}, {1.0, 0.0}) == doctest::Approx(0.164252).epsilon(1e-5));
}

TEST_CASE("bce clamps rather than returning infinity") {
  double loss = bce_loss({0.0, 1.0}, {1.0, 0.0});
  CHECK(std::isfinite(loss));
  CHECK(loss > 10.0);
}

TEST_CASE("bce rejects mismatched lengths") {
  CHECK_THROWS_AS(bce_loss({0.5}, {1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("zero-weight model scores exactly one half") {
  PrmModel m(kFeatureDim, 16);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) CHECK(m.score(features_of(rng)) == 0.5);
}

TEST_CASE("forward pass matches a by-hand 2-2-1 network") {
  // w1 = [[0.5,-0.25],[0.1,0.3]], b1 = [0.05,-0.1], w2 = [0.7,-0.4], b2 = 0.2
  PrmModel m(2, 2);
  m.params() = {0.5, -0.25, 0.1, 0.3, 0.05, -0.1, 0.7, -0.4, 0.2};
  double x0 = 0.8, x1 = -0.5;
  double h0 = std::tanh(0.5 * x0 - 0.25 * x1 + 0.05);
  double h1 = std::tanh(0.1 * x0 + 0.3 * x1 - 0.1);
  double z = 0.7 * h0 - 0.4 * h1 + 0.2;
  double expected = 1.0 / (1.0 + std::exp(-z));
  CHECK(std::abs(m.score(std::vector<double>{x0, x1}) - expected) < 1e-12);
}

TEST_CASE("score gradient matches central finite differences") {
  Rng rng(11);
  for (int fixture = 0; fixture < 10; ++fixture) {
    PrmModel m = random_model(8, 100 + fixture);
    std::vector<double> x = features_of(rng);
    std::vector<double> grad = m.score_gradient(x);
    REQUIRE(grad.size() == m.param_count());
    const double h = 1e-5;
    for (std::size_t i = 0; i < m.param_count(); ++i) {
      double orig = m.params()[i];
      m.params()[i] = orig + h;
      double up = m.score(x);
      m.params()[i] = orig - h;
      double down = m.score(x);
      m.params()[i] = orig;
      double fd = (up - down) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      CHECK(std::abs(fd - grad[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("training gradient matches finite differences of the batch loss") {
  Rng rng(21);
  for (int fixture = 0; fixture < 10; ++fixture) {
    PrmModel m = random_model(4, 300 + fixture);
    std::vector<TrainSample> batch;
    for (int i = 0; i < 6; ++i) {
      TrainSample s;
      for (auto& v : s.features.v) v = rng.normal();
      s.label = rng.bernoulli(0.5);
      batch.push_back(s);
    }
    auto loss_at = [&]() { return bce_on(m, batch); };
    std::vector<double> grad = bce_gradient(m, batch);
    const double h = 1e-5;
    for (std::size_t i = 0; i < m.param_count(); ++i) {
      double orig = m.params()[i];
      m.params()[i] = orig + h;
      double up = loss_at();
      m.params()[i] = orig - h;
      double down = loss_at();
      m.params()[i] = orig;
      double fd = (up - down) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      CHECK(std::abs(fd - grad[i]) / denom < 1e-4);
    }
  }
}

TEST_CASE("training a separable dataset reaches perfect validation accuracy") {
  auto data = synthetic_dataset(2000, 0.0, 5);
  TrainConfig cfg;
  cfg.seed = 9;
  PrmModel m = train(data, cfg);
  int correct = 0;
  for (const auto& s : data)
    correct += ((m.score(s.features) > 0.5) == s.label) ? 1 : 0;
  CHECK(correct == static_cast<int>(data.size()));
  CHECK(m.meta.final_val_loss < 0.1);
  CHECK(m.meta.epochs_run > 0);
  CHECK(static_cast<int>(m.meta.val_loss_curve.size()) == m.meta.epochs_run);
}

TEST_CASE("noisy dataset still trains to a strong ranking") {
  auto data = synthetic_dataset(3000, 0.25, 6);
  TrainConfig cfg;
  cfg.seed = 10;
  PrmModel m = train(data, cfg);
  // AUC over the training distribution
  std::vector<std::pair<double, bool>> scored;
  for (const auto& s : data) scored.emplace_back(m.score(s.features), s.label);
  double wins = 0, pairs = 0;
  for (const auto& [sa, la] : scored)
    for (const auto& [sb, lb] : scored)
      if (la && !lb) {
        ++pairs;
        wins += sa > sb ? 1.0 : (sa == sb ? 0.5 : 0.0);
      }
  CHECK(wins / pairs >= 0.85);
}

TEST_CASE("training is bit-deterministic") {
  auto data = synthetic_dataset(600, 0.25, 7);
  TrainConfig cfg;
  cfg.seed = 13;
  cfg.max_epochs = 30;
  PrmModel a = train(data, cfg);
  PrmModel b = train(data, cfg);
  REQUIRE(a.param_count() == b.param_count());
  for (std::size_t i = 0; i < a.param_count(); ++i)
    CHECK(a.params()[i] == b.params()[i]);
  cfg.seed = 14;
  PrmModel c = train(data, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.param_count(); ++i)
    differs |= a.params()[i] != c.params()[i];
  CHECK(differs);
}

TEST_CASE("training rejects degenerate datasets") {
  TrainConfig cfg;
  std::vector<TrainSample> tiny(4);
  CHECK_THROWS_AS(train(tiny, cfg), std::invalid_argument);  // too small

  auto one_class = synthetic_dataset(400, 0.1, 8);
  for (auto& s : one_class) s.label = true;
  CHECK_THROWS_AS(train(one_class, cfg), std::invalid_argument);

  cfg.validation_fraction = 0.9;
  auto data = synthetic_dataset(400, 0.1, 9);
  CHECK_THROWS_AS(train(data, cfg), std::invalid_argument);
}

TEST_CASE("downsampling balances the class counts") {
  auto data = synthetic_dataset(1000, 0.1, 15);
  // skew 4:1 positive
  std::vector<TrainSample> skewed;
  for (const auto& s : data) {
    if (s.label || skewed.size() % 5 == 0) skewed.push_back(s);
  }
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 20;
  cfg.downsample_positive = true;
  PrmModel m = train(skewed, cfg);  // should not throw and should learn
  CHECK(m.meta.final_val_loss < std::log(2.0));
}

TEST_CASE("score_trace aggregates per-step scores") {
  auto problems = generate_problems(Domain::MathChain, 4, 19);
  const Problem& p = problems[0];
  StochasticPolicy policy{0.3, 0.0, 1.0, 2};
  ReasoningTrace t = rollout(policy, p, {p.id});
  PrmModel m = random_model(16, 55);
  Featurizer fz{0.25, 77};
  BudgetLedger ledger;
  TraceScore last = score_trace(m, p, t, AggregationRule::PrmLast, fz, &ledger);
  TraceScore min = score_trace(m, p, t, AggregationRule::PrmMin, fz);
  REQUIRE(last.per_step.size() == t.steps.size());
  CHECK(last.aggregate == last.per_step.back());
  CHECK(min.aggregate == *std::min_element(min.per_step.begin(), min.per_step.end()));
  CHECK(min.per_step == last.per_step);
  CHECK(ledger.prm_eval_units() == t.steps.size());
}

TEST_CASE("model json round-trips with scores intact") {
  PrmModel m = random_model(16, 91);
  m.meta.seed = 1234;
  m.meta.epochs_run = 17;
  m.meta.final_val_loss = 0.25;
  std::string path =
      (std::filesystem::temp_directory_path() / "prmlab_model_rt.json").string();
  save_model(path, m);
  PrmModel back = load_model(path);
  CHECK(back.feature_dim() == m.feature_dim());
  CHECK(back.hidden_dim() == m.hidden_dim());
  CHECK(back.meta.seed == 1234);
  CHECK(back.meta.epochs_run == 17);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    auto x = features_of(rng);
    CHECK(back.score(x) == m.score(x));
  }
}

TEST_CASE("a trained scorer prefers the verified step of a matched pair") {
  // pairs differing only in the consistency channels, like a correct step vs
  // its corrupted twin at the same position
  auto data = synthetic_dataset(3000, 0.25, 23);
  TrainConfig cfg;
  cfg.seed = 4;
  PrmModel m = train(data, cfg);
  Rng rng(31);
  int preferred = 0;
  const int pairs = 200;
  for (int i = 0; i < pairs; ++i) {
    TrainSample good, bad;
    double pos = rng.uniform();
    good.features.v[1] = bad.features.v[1] = pos;
    good.features.v[9] = bad.features.v[9] = rng.uniform();
    good.features.v[11] = bad.features.v[11] = 1.0;
    good.features.v[0] = std::clamp(1.0 + 0.25 * rng.normal(), 0.0, 1.0);
    bad.features.v[0] = std::clamp(0.0 + 0.25 * rng.normal(), 0.0, 1.0);
    good.features.v[6] = std::clamp(1.0 + 0.5 * rng.normal(), 0.0, 1.0);
    bad.features.v[6] = std::clamp(0.0 + 0.5 * rng.normal(), 0.0, 1.0);
    if (m.score(good.features) > m.score(bad.features)) ++preferred;
  }
  CHECK(preferred >= static_cast<int>(0.9 * pairs));
}

TEST_CASE("aggregation rule names round-trip") {
  CHECK(parse_aggregation(aggregation_name(AggregationRule::PrmMin)) ==
        AggregationRule::PrmMin);
  CHECK(parse_aggregation(aggregation_name(AggregationRule::PrmLast)) ==
        AggregationRule::PrmLast);
  CHECK_THROWS_AS(parse_aggregation("median"), std::invalid_argument);
}
