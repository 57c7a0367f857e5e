#include "dspn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "dspn/rng.hpp"
#include "json.hpp"

namespace dspn::train {

using model::EncodedSample;
using model::Model;
using model::ParameterSet;
using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate < 1.0)) fail("learning_rate must be in (0,1)");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) fail("betas must be in (0,1)");
  if (!(eps > 0.0)) fail("eps must be > 0");
  if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
  if (!(unit_dropout >= 0.0 && unit_dropout <= 1.0)) fail("unit_dropout must be in [0,1]");
  if (!(adv_dropout >= 0.0 && adv_dropout <= 1.0)) fail("adv_dropout must be in [0,1]");
}

double adam_step(ParameterSet& params, AdamState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");

  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    for (const auto& p : params)
      if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    throw NumericError("gradient norm overflow");
  }
  const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  std::size_t k = 0;
  for (auto& p : params) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    ++k;
    if (m.size() != p.value.numel()) throw std::invalid_argument("adam_step: moment shape mismatch for " + p.name);
    const auto g = p.grad.data();
    auto x = p.value.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      x[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void check_metric_input(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("metric: scores and labels differ in length");
  if (scores.empty()) throw MetricError("metric: empty input");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("metric: labels must be 0 or 1");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_metric_input(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of 1-based positive ranks, tied groups sharing their average rank.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) pos_in_group += static_cast<std::size_t>(labels[order[j++]]);
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(pos_in_group);
    n_pos += pos_in_group;
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc: undefined with a single class");
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double acc(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_metric_input(scores, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += ((scores[i] > threshold ? 1 : 0) == labels[i]);
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double bce_value(double p, int y) {
  const double pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

// Runs f(i) for i in [0, n) striped over `threads` workers.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F f) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i, 0u);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) f(i, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<double> predict(Model& m, std::span<const EncodedSample> samples, unsigned threads) {
  std::vector<double> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i, unsigned) {
    model::Tape tape;
    out[i] = model::forward(tape, m, samples[i]).value().item();
  });
  return out;
}

MetricsReport evaluate(Model& m, std::span<const EncodedSample> samples, unsigned threads) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto p = predict(m, samples, threads);
  std::vector<int> y;
  y.reserve(samples.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    y.push_back(samples[i].label);
    loss += bce_value(p[i], samples[i].label);
  }
  MetricsReport r;
  r.n = samples.size();
  r.loss = loss / static_cast<double>(r.n);
  r.acc = acc(p, y);
  r.auc = auc(p, y);
  return r;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Per-worker parameter copies so that gradients of different samples never
// share a buffer. Sample gradients are summed in sample order afterwards, so
// the result is independent of the worker count.
class GradientPass {
 public:
  GradientPass(const Model& master, unsigned threads) : threads_(std::max(1u, threads)) {
    for (unsigned w = 0; w < threads_; ++w) workers_.push_back(clone(master));
    for (const auto& p : master.params) numel_ += p.value.numel();
  }

  // Accumulates mean-loss gradients of the batch into master grads; returns the summed loss.
  double run(Model& master, std::span<const EncodedSample> data, std::span<const std::size_t> batch,
             const TrainConfig& config, std::uint64_t dropout_seed) {
    for (Model& w : workers_) sync(master, w);
    const std::size_t b = batch.size();
    buffers_.resize(b);
    std::vector<double> losses(b);
    const double seed = 1.0 / static_cast<double>(b);
    parallel_for(b, threads_, [&](std::size_t i, unsigned wi) {
      Model& w = workers_[wi];
      w.params.zero_grad();
      model::Tape tape;
      EncodedSample dropped;
      const EncodedSample* sp = &data[batch[i]];
      if (config.unit_dropout > 0.0 || config.adv_dropout > 0.0) {
        Rng rng(mix_seed(dropout_seed, batch[i]));
        dropped = *sp;
        if (rng.bernoulli(config.unit_dropout)) dropped.unit = 0;
        if (rng.bernoulli(config.adv_dropout)) dropped.adv = 0;
        sp = &dropped;
      }
      const EncodedSample& s = *sp;
      const model::Var loss = model::bce_loss(model::forward(tape, w, s), s.label);
      losses[i] = loss.value().item();
      if (!std::isfinite(losses[i])) throw NumericError("non-finite loss on unit index " + std::to_string(batch[i]));
      tape.backward(loss, seed);
      auto& buf = buffers_[i];
      buf.resize(numel_);
      std::size_t off = 0;
      for (const auto& p : w.params) {
        std::copy(p.grad.data().begin(), p.grad.data().end(), buf.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value.numel();
      }
    });
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      total += losses[i];
      std::size_t off = 0;
      for (auto& p : master.params) {
        auto g = p.grad.mutable_data();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += buffers_[i][off + k];
        off += g.size();
      }
    }
    return total;
  }

 private:
  static Model clone(const Model& m) {
    Model c;
    c.kind = m.kind;
    c.config = m.config;
    c.params = m.params;
    return c;
  }

  static void sync(const Model& from, Model& to) {
    auto it = to.params.begin();
    for (const auto& p : from.params) {
      auto dst = (it++)->value.mutable_data();
      std::copy(p.value.data().begin(), p.value.data().end(), dst.begin());
    }
  }

  unsigned threads_;
  std::vector<Model> workers_;
  std::vector<std::vector<double>> buffers_;
  std::size_t numel_ = 0;
};

}  // namespace

TrainResult train(Model& m, std::span<const EncodedSample> train_set, std::span<const EncodedSample> test_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  std::size_t n_pos = 0;
  for (const auto& s : train_set) n_pos += s.label == 1;
  if (n_pos == 0 || n_pos == train_set.size()) throw MetricError("train: training split must contain both classes");

  TrainResult result;
  {
    const auto p = predict(m, train_set, config.threads);
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) loss += bce_value(p[i], train_set[i].label);
    result.initial_train_loss = loss / static_cast<double>(p.size());
  }

  AdamState adam;
  GradientPass pass(m, config.threads);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, 0xE90C0000ULL + epoch));
    rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      m.params.zero_grad();
      loss_sum += pass.run(m, train_set, std::span<const std::size_t>(order).subspan(start, end - start),
                           config, mix_seed(config.seed, 0xD80F0000ULL + epoch));
      adam_step(m.params, adam, config);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (!test_set.empty()) {
      const auto p = predict(m, test_set, config.threads);
      std::vector<int> y;
      for (const auto& s : test_set) y.push_back(s.label);
      rec.test_acc = acc(p, y);
      try {
        rec.test_auc = auc(p, y);
      } catch (const MetricError&) {
        rec.test_auc = 0.0;
      }
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Output

void write_metrics_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,test_auc,test_acc\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.test_auc, r.test_acc);
    out << buf;
  }
}

std::string metrics_to_json(const MetricsReport& r) {
  json hist = json::array();
  for (const auto& e : r.history)
    hist.push_back(
        json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"test_auc", e.test_auc}, {"test_acc", e.test_acc}});
  return json{{"auc", r.auc}, {"acc", r.acc}, {"loss", r.loss}, {"n", r.n}, {"history", hist}}.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    auto rd = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::remove_reference_t<decltype(field)>>();
    };
    rd("batch_size", c.batch_size);
    rd("learning_rate", c.learning_rate);
    rd("beta1", c.beta1);
    rd("beta2", c.beta2);
    rd("eps", c.eps);
    rd("epochs", c.epochs);
    rd("seed", c.seed);
    rd("clip_norm", c.clip_norm);
    rd("threads", c.threads);
    rd("unit_dropout", c.unit_dropout);
    rd("adv_dropout", c.adv_dropout);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace dspn::train
