#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "dspn/trainer.hpp"

using namespace dspn;
using namespace dspn::model;
using namespace dspn::train;

namespace {

// Pair counting with 0.5 credit for ties, written independently of auc().
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) hits += 1.0;
      if (s[i] == s[j]) hits += 0.5;
    }
  }
  return hits / static_cast<double>(pairs);
}

EncodedSample synthetic(Rng& rng, const DspnConfig& c, std::size_t unit) {
  EncodedSample s;
  s.unit = unit;
  s.adv = 1 + rng.below(c.n_adv - 1);
  s.cat = 1 + rng.below(c.n_cat - 1);
  s.label = static_cast<int>(rng.below(2));
  for (std::size_t d = 0; d < c.l; ++d) {
    EncodedDay day;
    for (std::size_t j = 0; j < c.n_I; ++j) day.report.push_back(rng.normal());
    day.ult_tags = {{1 + rng.below(c.n_tag - 1), rng.normal()}};
    for (EncodedActions* g : {&day.tags, &day.pos}) {
      const std::size_t valid = rng.below(c.n_a + 1);
      for (std::size_t i = 0; i < c.n_a; ++i) {
        g->target.push_back(i < valid ? 1 + rng.below(c.n_tag - 1) : 0);
        g->kind.push_back(i < valid ? rng.below(kActionKindCount) : 0);
        g->value.push_back(i < valid ? rng.normal() : 0.0);
        g->mask.push_back(i < valid ? 1.0 : 0.0);
      }
    }
    s.days.push_back(std::move(day));
  }
  return s;
}

std::vector<EncodedSample> synthetic_set(std::size_t n, const DspnConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic(rng, c, 1 + i % (c.n_unit - 1)));
  return out;
}

}  // namespace

TEST_CASE("adam") {
  TrainConfig cfg;

  SUBCASE("zero gradients leave parameters unchanged") {
    ParameterSet ps;
    ps.add("x", Tensor::row({1.0, -2.0, 3.0}));
    AdamState st;
    for (int i = 0; i < 5; ++i) adam_step(ps, st, cfg);
    CHECK(ps.get("x").value == Tensor::row({1.0, -2.0, 3.0}));
    CHECK(st.t == 5);
  }

  SUBCASE("first step moves by about lr against the gradient sign") {
    ParameterSet ps;
    ps.add("x", Tensor::row({0.0, 0.0}));
    ps.get("x").grad = Tensor::row({0.3, -2.0});
    AdamState st;
    adam_step(ps, st, cfg);
    CHECK(ps.get("x").value[0] == doctest::Approx(-cfg.learning_rate).epsilon(1e-6));
    CHECK(ps.get("x").value[1] == doctest::Approx(cfg.learning_rate).epsilon(1e-6));
  }

  SUBCASE("descent on x^2") {
    ParameterSet ps;
    Parameter& x = ps.add("x", Tensor::scalar(3.0));
    TrainConfig c = cfg;
    c.learning_rate = 0.1;
    AdamState st;
    for (int i = 0; i < 200; ++i) {
      x.grad = Tensor::scalar(2.0 * x.value.item());
      adam_step(ps, st, c);
    }
    CHECK(std::abs(x.value.item()) < 0.1);
  }

  SUBCASE("clipping bounds the norm seen by the moments") {
    ParameterSet a, b;
    a.add("x", Tensor::row({0.0, 0.0})).grad = Tensor::row({300.0, 400.0});
    b.add("x", Tensor::row({0.0, 0.0})).grad = Tensor::row({3.0, 4.0});
    AdamState sa, sb;
    CHECK(adam_step(a, sa, cfg) == doctest::Approx(500.0));
    adam_step(b, sb, cfg);
    CHECK(sa.m[0][0] == doctest::Approx(sb.m[0][0]));
    CHECK(sa.v[0][1] == doctest::Approx(sb.v[0][1]));
  }

  SUBCASE("non-finite gradient names the parameter") {
    ParameterSet ps;
    ps.add("ok", Tensor::scalar(1.0));
    ps.add("broken", Tensor::scalar(1.0)).grad = Tensor::scalar(std::nan(""));
    AdamState st;
    try {
      adam_step(ps, st, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
  }
}

TEST_CASE("auc") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auc(s, y) == 0.75);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1, 1}), MetricError);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 0}), std::invalid_argument);

  Rng rng(1000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> sc(n);
    std::vector<int> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties are common.
      sc[i] = rng.bernoulli(0.5) ? static_cast<double>(rng.below(10)) / 10.0 : rng.uniform();
      lab[i] = static_cast<int>(rng.below(2));
    }
    lab[0] = 0;
    lab[1] = 1;
    const double a = auc(sc, lab);
    REQUIRE(a == brute_auc(sc, lab));

    std::vector<double> mono(n);
    std::transform(sc.begin(), sc.end(), mono.begin(), [](double x) { return std::exp(3.0 * x) - 7.0; });
    CHECK(auc(mono, lab) == a);
  }
}

TEST_CASE("acc") {
  CHECK(acc(std::vector<double>{0.6, 0.4}, std::vector<int>{1, 0}) == 1.0);
  CHECK(acc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> sc(n);
    std::vector<int> lab(n);
    std::size_t hamming = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = rng.uniform();
      lab[i] = static_cast<int>(rng.below(2));
      hamming += (sc[i] > 0.5 ? 1 : 0) != lab[i];
    }
    CHECK(acc(sc, lab) == doctest::Approx(1.0 - static_cast<double>(hamming) / static_cast<double>(n)));
  }
}

TEST_CASE("memorization of 64 samples") {
  DspnConfig c = DspnConfig::tiny();
  c.n_unit = 65;  // one unit id per sample, as in real data
  const auto data = synthetic_set(64, c, 42);
  Model m = make_dspn(c, 42);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 42;
  cfg.unit_dropout = 0.0;
  cfg.adv_dropout = 0.0;
  const auto result = train::train(m, data, {}, cfg);
  const auto report = evaluate(m, data);
  MESSAGE("train acc " << report.acc << " loss " << report.loss);
  CHECK(report.acc >= 0.95);
  CHECK(result.history.back().train_loss < result.initial_train_loss);
  CHECK(result.history.back().test_auc == 0.0);
}

TEST_CASE("training is deterministic and independent of thread count") {
  const DspnConfig c = DspnConfig::tiny();
  const auto train_set = synthetic_set(70, c, 1);
  const auto test_set = synthetic_set(30, c, 2);
  auto run = [&](unsigned threads, ModelKind kind) {
    Model m = kind == ModelKind::Dspn ? make_dspn(c, 5) : make_mlp(c, 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.threads = threads;
    const auto r = train::train(m, train_set, test_set, cfg);
    std::ostringstream out;
    write_metrics_csv(out, r.history);
    save_checkpoint(out, m);
    return out.str();
  };
  for (const ModelKind kind : {ModelKind::Dspn, ModelKind::Mlp}) {
    const std::string one = run(1, kind);
    CHECK(one == run(1, kind));
    CHECK(one == run(3, kind));
  }
}

TEST_CASE("evaluation survives a checkpoint round trip") {
  const DspnConfig c = DspnConfig::tiny();
  const auto data = synthetic_set(40, c, 9);
  Model m = make_dspn(c, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  train::train(m, data, {}, cfg);
  const auto before = evaluate(m, data);
  std::stringstream buf;
  save_checkpoint(buf, m);
  Model back = load_checkpoint(buf);
  const auto after = evaluate(back, data);
  CHECK(metrics_to_json(after) == metrics_to_json(before));
  CHECK(predict(back, data) == predict(m, data));
}

TEST_CASE("train rejects degenerate inputs") {
  const DspnConfig c = DspnConfig::tiny();
  auto data = synthetic_set(10, c, 3);
  Model m = make_dspn(c, 1);
  TrainConfig cfg;
  CHECK_THROWS(train::train(m, {}, {}, cfg));
  for (auto& s : data) s.label = 1;
  CHECK_THROWS_AS(train::train(m, data, {}, cfg), MetricError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("metrics output") {
  std::vector<EpochRecord> h{{1, 0.5, 0.75, 0.7}, {2, 0.25, 0.8, 0.72}};
  std::ostringstream out;
  write_metrics_csv(out, h);
  CHECK(out.str() == "epoch,train_loss,test_auc,test_acc\n1,0.5,0.75,0.69999999999999996\n2,0.25,0.80000000000000004,"
                     "0.71999999999999997\n");

  const TrainConfig t = train_config_from_json(R"({"epochs": 7, "learning_rate": 0.01, "unit_dropout": 0.5})");
  CHECK(t.epochs == 7);
  CHECK(t.learning_rate == 0.01);
  CHECK(t.unit_dropout == 0.5);
  CHECK(t.batch_size == 32);
  CHECK_THROWS(train_config_from_json(R"({"learning_rate": 2.0})"));
  CHECK_THROWS(train_config_from_json("nope"));
}
