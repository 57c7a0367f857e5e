#include <benchmark/benchmark.h>

#include <vector>

#include "dspn/pipeline.hpp"

using namespace dspn;

namespace {

struct Fixture {
  pipeline::RunConfig config;
  pipeline::Prepared prepared;

  Fixture() {
    config = pipeline::run_config_from_json(R"({"seed": 1, "sim": {"n_advertisers": 60}})");
    const auto market = pipeline::generate(config);
    prepared = pipeline::prepare(market.traces, config);
  }

  static Fixture& get() {
    static Fixture f;
    return f;
  }
};

void BM_DspnForward(benchmark::State& state) {
  auto& f = Fixture::get();
  auto m = pipeline::init_model(f.config, f.prepared.vocab);
  const auto& s = f.prepared.train.front();
  for (auto _ : state) {
    nd::Tape tape;
    benchmark::DoNotOptimize(model::forward(tape, m, s).value().item());
  }
}
BENCHMARK(BM_DspnForward);

void BM_DspnForwardBackward(benchmark::State& state) {
  auto& f = Fixture::get();
  auto m = pipeline::init_model(f.config, f.prepared.vocab);
  const auto& s = f.prepared.train.front();
  for (auto _ : state) {
    nd::Tape tape;
    auto loss = model::bce_loss(model::forward(tape, m, s), s.label);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value().item());
  }
}
BENCHMARK(BM_DspnForwardBackward);

void BM_MlpForwardBackward(benchmark::State& state) {
  auto& f = Fixture::get();
  auto c = f.config;
  c.model_kind = model::ModelKind::Mlp;
  auto m = pipeline::init_model(c, f.prepared.vocab);
  const auto& s = f.prepared.train.front();
  for (auto _ : state) {
    nd::Tape tape;
    auto loss = model::bce_loss(model::forward(tape, m, s), s.label);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value().item());
  }
}
BENCHMARK(BM_MlpForwardBackward);

void BM_Auc(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = static_cast<int>(rng.below(2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(train::auc(s, y));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auc)->RangeMultiplier(10)->Range(1000, 100000)->Complexity(benchmark::oNLogN);

void BM_Kmeans(benchmark::State& state) {
  Rng rng(4);
  intent::Points w(static_cast<std::size_t>(state.range(0)), intent::Point(kIndicatorCount + 1));
  for (auto& p : w)
    for (double& x : p) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(intent::kmeans(w, 4, 42).inertia);
}
BENCHMARK(BM_Kmeans)->Arg(1000)->Arg(5000);

void BM_GenerateMarket(benchmark::State& state) {
  auto c = sim::SimConfig::defaults();
  c.n_advertisers = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sim::generate_dataset(c, 42).traces.size());
}
BENCHMARK(BM_GenerateMarket)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
