#include "prmlab/prm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "prmlab/rng.hpp"

namespace prmlab {

using nlohmann::json;

namespace {
constexpr double kClamp = 1e-12;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

std::string aggregation_name(AggregationRule r) {
  return r == AggregationRule::PrmLast ? "prm_last" : "prm_min";
}

AggregationRule parse_aggregation(const std::string& s) {
  if (s == "prm_last") return AggregationRule::PrmLast;
  if (s == "prm_min") return AggregationRule::PrmMin;
  throw std::invalid_argument("unknown aggregation rule: " + s);
}

PrmModel::PrmModel(int feature_dim, int hidden_dim)
    : feature_dim_(feature_dim),
      hidden_dim_(hidden_dim),
      theta_(static_cast<std::size_t>(hidden_dim) * feature_dim + hidden_dim +
             hidden_dim + 1,
             0.0) {
  if (feature_dim < 1 || hidden_dim < 1)
    throw std::invalid_argument("PrmModel: dims must be >= 1");
}

double PrmModel::score(const StepFeatures& f) const {
  return score(std::vector<double>(f.v.begin(), f.v.end()));
}

double PrmModel::score(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != feature_dim_)
    throw std::invalid_argument("score: feature dimension mismatch");
  const int F = feature_dim_, H = hidden_dim_;
  const double* w1 = theta_.data();
  const double* b1 = w1 + static_cast<std::size_t>(H) * F;
  const double* w2 = b1 + H;
  const double b2 = w2[H];
  double z2 = b2;
  for (int j = 0; j < H; ++j) {
    double z1 = b1[j];
    for (int i = 0; i < F; ++i) z1 += w1[static_cast<std::size_t>(j) * F + i] * x[i];
    z2 += w2[j] * std::tanh(z1);
  }
  double p = sigmoid(z2);
  // sigmoid saturates to exactly 0/1 in floating point for large |z2|
  return std::clamp(p, kClamp, 1.0 - kClamp);
}

std::vector<double> PrmModel::score_gradient(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != feature_dim_)
    throw std::invalid_argument("score_gradient: feature dimension mismatch");
  const int F = feature_dim_, H = hidden_dim_;
  const double* w1 = theta_.data();
  const double* b1 = w1 + static_cast<std::size_t>(H) * F;
  const double* w2 = b1 + H;
  const double b2 = w2[H];

  std::vector<double> h(H);
  double z2 = b2;
  for (int j = 0; j < H; ++j) {
    double z1 = b1[j];
    for (int i = 0; i < F; ++i) z1 += w1[static_cast<std::size_t>(j) * F + i] * x[i];
    h[j] = std::tanh(z1);
    z2 += w2[j] * h[j];
  }
  double p = sigmoid(z2);
  double dp_dz2 = p * (1.0 - p);

  std::vector<double> g(theta_.size(), 0.0);
  double* gw1 = g.data();
  double* gb1 = gw1 + static_cast<std::size_t>(H) * F;
  double* gw2 = gb1 + H;
  for (int j = 0; j < H; ++j) {
    gw2[j] = dp_dz2 * h[j];
    double dz1 = dp_dz2 * w2[j] * (1.0 - h[j] * h[j]);
    gb1[j] = dz1;
    for (int i = 0; i < F; ++i) gw1[static_cast<std::size_t>(j) * F + i] = dz1 * x[i];
  }
  gw2[H] = dp_dz2;  // b2
  return g;
}

double bce_loss(const std::vector<double>& predictions,
                const std::vector<double>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw std::invalid_argument("bce_loss: length mismatch or empty");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double p = std::clamp(predictions[i], kClamp, 1.0 - kClamp);
    double y = labels[i];
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return total / static_cast<double>(predictions.size());
}

std::vector<double> bce_gradient(const PrmModel& model,
                                 const std::vector<TrainSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("bce_gradient: empty batch");
  const int F = model.feature_dim(), H = model.hidden_dim();
  const auto& theta = model.params();
  const double* w1 = theta.data();
  const double* b1 = w1 + static_cast<std::size_t>(H) * F;
  const double* w2 = b1 + H;
  const double b2 = w2[H];

  std::vector<double> g(theta.size(), 0.0);
  double* gw1 = g.data();
  double* gb1 = gw1 + static_cast<std::size_t>(H) * F;
  double* gw2 = gb1 + H;

  std::vector<double> h(H);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    const auto& x = sample.features.v;
    double z2 = b2;
    for (int j = 0; j < H; ++j) {
      double z1 = b1[j];
      for (int i = 0; i < F; ++i) z1 += w1[static_cast<std::size_t>(j) * F + i] * x[i];
      h[j] = std::tanh(z1);
      z2 += w2[j] * h[j];
    }
    double p = sigmoid(z2);
    // d(BCE)/dz2 for sigmoid output
    double dz2 = (p - (sample.label ? 1.0 : 0.0)) * inv_n;
    for (int j = 0; j < H; ++j) {
      gw2[j] += dz2 * h[j];
      double dz1 = dz2 * w2[j] * (1.0 - h[j] * h[j]);
      gb1[j] += dz1;
      for (int i = 0; i < F; ++i) gw1[static_cast<std::size_t>(j) * F + i] += dz1 * x[i];
    }
    gw2[H] += dz2;
  }
  return g;
}

double bce_on(const PrmModel& model, const std::vector<TrainSample>& data) {
  std::vector<double> p, y;
  p.reserve(data.size());
  y.reserve(data.size());
  for (const auto& s : data) {
    p.push_back(model.score(std::vector<double>(s.features.v.begin(), s.features.v.end())));
    y.push_back(s.label ? 1.0 : 0.0);
  }
  return bce_loss(p, y);
}

PrmModel train(const std::vector<TrainSample>& dataset, const TrainConfig& config) {
  if (config.validation_fraction <= 0.0 || config.validation_fraction >= 0.5)
    throw std::invalid_argument("train: validation_fraction outside (0, 0.5)");
  if (static_cast<int>(dataset.size()) < 2 * config.batch_size)
    throw std::invalid_argument("train: dataset smaller than 2*batch_size");
  std::size_t positives = 0;
  for (const auto& s : dataset) positives += s.label ? 1 : 0;
  if (positives == 0 || positives == dataset.size())
    throw std::invalid_argument("train: dataset contains a single class");

  Rng rng(derive_seed(config.seed, "train"));

  std::vector<TrainSample> data = dataset;
  if (config.downsample_positive && positives > dataset.size() - positives) {
    std::size_t keep = dataset.size() - positives;  // match negative count
    std::vector<TrainSample> pos, neg;
    for (const auto& s : data) (s.label ? pos : neg).push_back(s);
    for (std::size_t i = pos.size() - 1; i > 0; --i) {
      std::size_t j = rng.uniform_int(i + 1);
      std::swap(pos[i], pos[j]);
    }
    pos.resize(keep);
    data = std::move(neg);
    data.insert(data.end(), pos.begin(), pos.end());
  }

  // seeded shuffle, then the tail becomes the validation split
  for (std::size_t i = data.size() - 1; i > 0; --i) {
    std::size_t j = rng.uniform_int(i + 1);
    std::swap(data[i], data[j]);
  }
  std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(data.size() * config.validation_fraction));
  std::vector<TrainSample> val(data.end() - n_val, data.end());
  std::vector<TrainSample> tr(data.begin(), data.end() - n_val);

  PrmModel model(kFeatureDim, config.hidden_dim);
  {
    // small uniform init
    auto& theta = model.params();
    double scale = 1.0 / std::sqrt(static_cast<double>(kFeatureDim));
    for (auto& w : theta) w = (rng.uniform() * 2.0 - 1.0) * scale;
  }

  const std::size_t P = model.param_count();
  std::vector<double> m(P, 0.0), v(P, 0.0);
  std::size_t step = 0;

  double initial_val = bce_on(model, val);
  double best_val = initial_val;
  std::vector<double> best_theta = model.params();
  int best_epoch = 0;
  int epoch = 0;

  std::vector<std::size_t> order(tr.size());
  std::iota(order.begin(), order.end(), 0);

  for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::size_t j = rng.uniform_int(i + 1);
      std::swap(order[i], order[j]);
    }
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(tr[order[i]]);
      auto g = bce_gradient(model, batch);
      ++step;
      auto& theta = model.params();
      double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < P; ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        // decoupled weight decay, applied separately from the moment step
        theta[i] -= config.learning_rate * config.weight_decay * theta[i];
        theta[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
      }
    }
    double val_loss = bce_on(model, val);
    model.meta.val_loss_curve.push_back(val_loss);
    if (std::isnan(val_loss)) {
      throw std::runtime_error("train: NaN validation loss at epoch " +
                               std::to_string(epoch));
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      best_theta = model.params();
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= config.early_stop_patience) break;
  }

  model.params() = best_theta;
  model.meta.seed = config.seed;
  model.meta.epochs_run = std::min(epoch, config.max_epochs);
  model.meta.final_val_loss = best_val;
  return model;
}

TraceScore score_trace(const PrmModel& model, const Problem& problem,
                       const ReasoningTrace& trace, AggregationRule rule,
                       const Featurizer& featurizer, BudgetLedger* ledger) {
  if (trace.steps.empty())
    throw std::invalid_argument("score_trace: empty trace");
  TraceScore out;
  ReasoningTrace prefix;
  prefix.problem_id = trace.problem_id;
  prefix.generator_seed = trace.generator_seed;
  for (const auto& s : trace.steps) {
    if (ledger) ledger->charge_prm_eval(1);
    StepFeatures f = featurizer(problem, prefix, s);
    out.per_step.push_back(model.score(f));
    prefix.steps.push_back(s);
  }
  if (rule == AggregationRule::PrmLast) {
    out.aggregate = out.per_step.back();
  } else {
    out.aggregate = *std::min_element(out.per_step.begin(), out.per_step.end());
  }
  return out;
}

void save_model(const std::string& path, const PrmModel& model) {
  json j;
  j["feature_dim"] = model.feature_dim();
  j["hidden_dim"] = model.hidden_dim();
  j["theta"] = model.params();
  j["training_meta"] = {{"seed", model.meta.seed},
                        {"epochs_run", model.meta.epochs_run},
                        {"final_val_loss", model.meta.final_val_loss}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

PrmModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  json j = json::parse(in);
  PrmModel model(j.at("feature_dim").get<int>(), j.at("hidden_dim").get<int>());
  auto theta = j.at("theta").get<std::vector<double>>();
  if (theta.size() != model.param_count())
    throw std::runtime_error("load_model: parameter count mismatch in " + path);
  model.params() = std::move(theta);
  const auto& meta = j.at("training_meta");
  model.meta.seed = meta.at("seed").get<std::uint64_t>();
  model.meta.epochs_run = meta.at("epochs_run").get<int>();
  model.meta.final_val_loss = meta.at("final_val_loss").get<double>();
  return model;
}

}  // namespace prmlab
