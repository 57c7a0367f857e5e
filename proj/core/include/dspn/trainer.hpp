#pragma once

// Mini-batch Adam training, AUC/ACC metrics and evaluation.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dspn/model.hpp"

namespace dspn::train {

/// Non-finite loss, gradient or parameter.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric that is undefined for its input (for example AUC on one class).
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 4;
  std::uint64_t seed = 42;
  double clip_norm = 5.0;
  /// Per-step probabilities of replacing a training sample's unit or
  /// advertiser id with the OOV id, drawn independently.
  double unit_dropout = 0.9;
  double adv_dropout = 0.9;
  /// Worker threads for gradient and evaluation passes. Results do not depend on it.
  unsigned threads = 1;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// Clips the gradients of `params` to a global norm of clip_norm, then
/// applies one bias-corrected Adam update. Returns the pre-clip norm.
double adam_step(model::ParameterSet& params, AdamState& state, const TrainConfig& config);

/// Mann-Whitney AUC; a tied positive/negative pair counts 0.5.
double auc(std::span<const double> scores, std::span<const int> labels);
/// Fraction of samples where (score > threshold) equals the label.
double acc(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_auc = 0.0;
  double test_acc = 0.0;
};

struct MetricsReport {
  double auc = 0.0;
  double acc = 0.0;
  double loss = 0.0;
  std::size_t n = 0;
  std::vector<EpochRecord> history;
};

/// Satisfaction probabilities in sample order.
std::vector<double> predict(model::Model& m, std::span<const model::EncodedSample> samples, unsigned threads = 1);

MetricsReport evaluate(model::Model& m, std::span<const model::EncodedSample> samples, unsigned threads = 1);

struct TrainResult {
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffles per epoch with a seeded stream; the last partial batch is kept.
/// An empty `test` set leaves test_auc / test_acc at 0 in the history.
TrainResult train(model::Model& m, std::span<const model::EncodedSample> train_set,
                  std::span<const model::EncodedSample> test_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// CSV with header epoch,train_loss,test_auc,test_acc.
void write_metrics_csv(std::ostream& out, std::span<const EpochRecord> history);
std::string metrics_to_json(const MetricsReport& r);

TrainConfig train_config_from_json(const std::string& text);

}  // namespace dspn::train
