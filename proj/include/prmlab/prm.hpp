#pragma once

/**
 * Step scorer: a two-layer scalar head (F -> H tanh -> 1 sigmoid) over step
 * features, trained with binary cross-entropy under AdamW with decoupled
 * weight decay and early stopping on validation BCE.
 *
 * Parameters live in one flat vector, layout [w1 (H x F, row-major), b1 (H),
 * w2 (H), b2], so gradient checking and the activation-pattern metric can
 * iterate every coordinate uniformly.
 *
 * Training is single-threaded and bit-deterministic given (dataset, config,
 * seed). A trained model is immutable and safe for concurrent scoring.
 */

#include <cstdint>
#include <string>
#include <vector>

#include "prmlab/core.hpp"
#include "prmlab/env.hpp"

namespace prmlab {

enum class AggregationRule { PrmLast, PrmMin };

std::string aggregation_name(AggregationRule r);
AggregationRule parse_aggregation(const std::string& s);

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  double final_val_loss = 0.0;
  std::vector<double> val_loss_curve;  // per epoch; not persisted
};

class PrmModel {
 public:
  PrmModel() = default;
  // zero-initialized parameters
  PrmModel(int feature_dim, int hidden_dim);

  int feature_dim() const { return feature_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  std::size_t param_count() const { return theta_.size(); }

  std::vector<double>& params() { return theta_; }
  const std::vector<double>& params() const { return theta_; }

  // forward pass; value strictly inside (0,1) for finite inputs
  double score(const StepFeatures& f) const;
  double score(const std::vector<double>& x) const;

  // d score / d theta_i for every parameter, same layout as params()
  std::vector<double> score_gradient(const std::vector<double>& x) const;

  TrainingMeta meta;

 private:
  int feature_dim_ = 0;
  int hidden_dim_ = 0;
  std::vector<double> theta_;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int max_epochs = 200;
  int early_stop_patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double validation_fraction = 0.1;
  int hidden_dim = 16;
  bool downsample_positive = false;  // rebalance by dropping excess positives
  std::uint64_t seed = 0;
};

struct TrainSample {
  StepFeatures features;
  bool label = false;
};

// mean BCE with predictions clamped to [1e-12, 1-1e-12].
double bce_loss(const std::vector<double>& predictions,
                const std::vector<double>& labels);

// mean BCE gradient w.r.t. every model parameter over the batch
std::vector<double> bce_gradient(const PrmModel& model,
                                 const std::vector<TrainSample>& batch);

double bce_on(const PrmModel& model, const std::vector<TrainSample>& data);

PrmModel train(const std::vector<TrainSample>& dataset, const TrainConfig& config);

struct TraceScore {
  double aggregate = 0.0;
  std::vector<double> per_step;
};

struct Featurizer {
  double sigma = 0.25;
  std::uint64_t noise_seed = 0;

  StepFeatures operator()(const Problem& problem, const ReasoningTrace& prefix,
                          const Step& step) const {
    return extract_features(problem, prefix, step, sigma, noise_seed);
  }
};

// Per-prefix scores p_1..p_T plus the aggregate (last or min). Charges one
// PRM-eval unit per step when a ledger is given.
TraceScore score_trace(const PrmModel& model, const Problem& problem,
                       const ReasoningTrace& trace, AggregationRule rule,
                       const Featurizer& featurizer,
                       BudgetLedger* ledger = nullptr);

void save_model(const std::string& path, const PrmModel& model);
PrmModel load_model(const std::string& path);

}  // namespace prmlab
