// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Criterion 6 re-runs the invariant test cases of the unit suites, which are
// linked into this binary, through an in-process doctest context.

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "dspn/pipeline.hpp"

using namespace dspn;
namespace fs = std::filesystem;

namespace {

// Regression floors pinned from the reference run (seed 42, default
// configuration) at observed - 0.02. Observed: DSPN AUC 0.8328, ARI 0.4542.
constexpr double kAucFloor = 0.80;
constexpr double kAucPinned = 0.8128;
constexpr double kMarginFloor = 0.02;
constexpr double kAriFloor = 0.3;
constexpr double kAriPinned = 0.4342;
constexpr double kGapFloor = 0.10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared synthetic inputs

model::EncodedActions random_actions(Rng& rng, std::size_t n_a, std::size_t vocab) {
  model::EncodedActions a;
  const std::size_t valid = rng.below(n_a + 1);
  for (std::size_t i = 0; i < n_a; ++i) {
    const bool on = i < valid;
    a.target.push_back(on ? 1 + rng.below(vocab - 1) : 0);
    a.kind.push_back(on ? rng.below(kActionKindCount) : 0);
    a.value.push_back(on ? rng.normal() : 0.0);
    a.mask.push_back(on ? 1.0 : 0.0);
  }
  return a;
}

model::EncodedSample random_sample(Rng& rng, const model::DspnConfig& c, std::size_t unit) {
  model::EncodedSample s;
  s.unit = unit;
  s.adv = 1 + rng.below(c.n_adv - 1);
  s.cat = 1 + rng.below(c.n_cat - 1);
  s.label = static_cast<int>(rng.below(2));
  for (std::size_t d = 0; d < c.l; ++d) {
    model::EncodedDay day;
    for (std::size_t j = 0; j < c.n_I; ++j) day.report.push_back(rng.normal());
    day.ult_tags = {{1 + rng.below(c.n_tag - 1), rng.normal()}};
    day.ult_pos = {{1 + rng.below(c.n_pos - 1), rng.normal()}};
    day.tags = random_actions(rng, c.n_a, c.n_tag);
    day.pos = random_actions(rng, c.n_a, c.n_pos);
    s.days.push_back(std::move(day));
  }
  return s;
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  const model::DspnConfig c = model::DspnConfig::tiny();
  Rng rng(1);
  double worst = 0.0;
  std::size_t entries = 0;
  for (int trial = 0; trial < 3; ++trial) {
    model::Model m = model::make_dspn(c, 100 + trial);
    for (auto& p : m.params)
      for (double& x : p.value.mutable_data()) x = rng.uniform(-0.5, 0.5);
    const auto s = random_sample(rng, c, 1 + rng.below(c.n_unit - 1));
    auto params = m.params.pointers();
    worst = std::max(worst, nd::grad_check(
                                [&](nd::Tape& t) { return model::bce_loss(model::forward(t, m, s), s.label); },
                                params, 1e-5));
    for (const auto& p : m.params) entries += p.value.data().size();
  }
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", worst <= 1e-4 && secs < 60.0,
         fmt("tiny DSPN (l=%zu n_a=%zu n_I=%zu h1=%zu h2=%zu), %zu entries, max rel err %.2e <= 1e-4, %.2f s < 60 s",
             c.l, c.n_a, c.n_I, c.h1, c.h2, entries, worst, secs));
}

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      hits += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return hits / pairs;
}

void metric_oracle() {
  const auto t0 = Clock::now();
  Rng rng(77);
  int exact = 0;
  std::size_t tied = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.bernoulli(0.5) ? static_cast<double>(rng.below(8)) / 8.0 : rng.uniform();
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    s[1] = s[0];
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    tied += std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
    exact += train::auc(s, y) == brute_auc(s, y);
  }
  const double secs = seconds_since(t0);
  report(2, "metric oracle", exact == 1000 && secs < 30.0,
         fmt("fast AUC == O(n^2) pair count on %d/1000 instances (n <= 200, %zu with ties), %.2f s < 30 s", exact,
             tied, secs));
}

void label_rule() {
  Rng rng(3);
  int agree = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t l = 1 + rng.below(12);
    const std::size_t l0 = l + rng.below(6);
    UnitTrace t;
    t.unit_id = i;
    std::vector<double> costs(l0 + l + rng.below(3));
    for (std::size_t d = 0; d < costs.size(); ++d) {
      const double u = rng.uniform();
      costs[d] = u < 0.5 ? 0.0 : u < 0.7 ? static_cast<double>(rng.below(5)) : rng.uniform(0.0, 6.0);
      DayRecord day;
      day.report.day_index = static_cast<int>(d);
      day.report.indicators.assign(kIndicatorCount, 0.0);
      day.report.indicators[idx(Indicator::Cost)] = costs[d];
      t.days.push_back(day);
    }
    const double eps = rng.bernoulli(0.5) ? 10.0 : static_cast<double>(rng.below(15));
    double follow = 0.0;
    for (std::size_t d = l0; d < l0 + l; ++d) follow += costs[d];
    agree += data::label_sample(t, l0, l, eps) == (follow <= eps ? 0 : 1);
  }
  report(3, "label rule", agree == 10000, fmt("agreement with direct re-implementation %d/10000", agree));
}

void learning_and_intents() {
  const auto t0 = Clock::now();
  pipeline::RunConfig c = pipeline::run_config_from_json(R"({"seed": 42})");
  c.threads = std::max(1u, std::thread::hardware_concurrency());
  c.train.threads = c.threads;
  const auto market = pipeline::generate(c);
  const auto p = pipeline::prepare(market.traces, c);

  auto dspn = pipeline::init_model(c, p.vocab);
  train::train(dspn, p.train, p.test, c.train);
  const double dspn_auc = train::evaluate(dspn, p.test, c.threads).auc;

  c.model_kind = model::ModelKind::Mlp;
  auto mlp = pipeline::init_model(c, p.vocab);
  train::train(mlp, p.train, p.test, c.train);
  const double mlp_auc = train::evaluate(mlp, p.test, c.threads).auc;
  const double secs = seconds_since(t0);

  const bool pass4 =
      dspn_auc >= kAucFloor && dspn_auc >= kAucPinned && dspn_auc - mlp_auc >= kMarginFloor && secs < 900.0;
  report(4, "synthetic learning", pass4,
         fmt("%zu units, %zu/%zu train/test, %zu epochs: DSPN AUC %.4f (>= %.2f, pinned %.4f), MLP AUC %.4f, margin "
             "%.4f >= %.2f, %.0f s < 900 s",
             market.traces.size(), p.train.size(), p.test.size(), c.train.epochs, dspn_auc, kAucFloor, kAucPinned,
             mlp_auc, dspn_auc - mlp_auc, kMarginFloor, secs));

  std::map<int, int> arch;
  for (const auto& a : market.advertisers) arch[a.advertiser_id] = a.archetype_id;
  std::vector<model::EncodedSample> encoded = p.train;
  encoded.insert(encoded.end(), p.test.begin(), p.test.end());
  std::vector<data::Sample> raw = p.split.train;
  raw.insert(raw.end(), p.split.test.begin(), p.split.test.end());
  const auto r = pipeline::analyze_intents(dspn, encoded, raw, arch, c);
  const double gap = r.in_cluster.overall - r.cross_cluster.overall;
  report(5, "intent recovery", r.ari >= kAriFloor && r.ari >= kAriPinned && gap >= kGapFloor,
         fmt("k=4 on %zu learned w: ARI %.4f (>= %.1f, pinned %.4f), in-cluster ACC %.4f vs cross-cluster %.4f, gap "
             "%.4f >= %.2f",
             r.w.size(), r.ari, kAriFloor, kAriPinned, r.in_cluster.overall, r.cross_cluster.overall, gap, kGapFloor));
}

struct CountingListener : doctest::IReporter {
  static inline unsigned cases = 0;
  static inline unsigned failed = 0;
  explicit CountingListener(const doctest::ContextOptions&) {}
  void report_query(const doctest::QueryData&) override {}
  void test_run_start() override {}
  void test_run_end(const doctest::TestRunStats& s) override {
    cases = s.numTestCasesPassingFilters;
    failed = s.numTestCasesFailed;
  }
  void test_case_start(const doctest::TestCaseData&) override {}
  void test_case_reenter(const doctest::TestCaseData&) override {}
  void test_case_end(const doctest::CurrentTestCaseStats&) override {}
  void test_case_exception(const doctest::TestCaseException&) override {}
  void subcase_start(const doctest::SubcaseSignature&) override {}
  void subcase_end() override {}
  void log_assert(const doctest::AssertData&) override {}
  void log_message(const doctest::MessageData&) override {}
  void test_case_skipped(const doctest::TestCaseData&) override {}
};
REGISTER_LISTENER("counting", 1, CountingListener);

void invariant_suites() {
  const std::vector<std::string> suites{
      "softmax rows sum to one for arbitrary finite inputs",  // row sums within 1e-12
      "action fusion",                                        // convex-combination bound
      "satisfaction head",                                    // monotonicity and day permutation
      "gru cell",                                             // scalar oracle within 1e-12
      "market response is monotone in every bid",
      "kept utility never decreases without churn",
      "kmeans",  // objective monotone
      "pca",     // orthonormal within 1e-9
  };
  std::string filter;
  for (const auto& s : suites) filter += (filter.empty() ? "" : ",") + s;
  doctest::Context ctx;
  ctx.addFilter("test-case", filter.c_str());
  ctx.setOption("minimal", true);
  const int rc = ctx.run();
  const bool pass = rc == 0 && CountingListener::cases == suites.size() && CountingListener::failed == 0;
  report(6, "invariant suites", pass,
         fmt("%u/%zu suites run, %u failed", CountingListener::cases, suites.size(), CountingListener::failed));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / ("dspn_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<fs::path> runs{root / "first", root / "second"};
  bool ran = true;
  for (const auto& dir : runs) {
    const fs::path cfg = dir.string() + ".json";
    std::ofstream(cfg) << R"({"seed": 42, "out_dir": ")" << dir.string()
                       << R"(", "sim": {"n_advertisers": 150}, "train": {"epochs": 2}})";
    for (const char* cmd : {"gen", "train", "eval"}) {
      std::ostringstream out, err;
      if (cli::run({cmd, "--config", cfg.string()}, out, err) != 0) {
        std::fprintf(stderr, "%s", err.str().c_str());
        ran = false;
      }
    }
  }
  const std::string m0 = slurp(runs[0] / "metrics.json"), m1 = slurp(runs[1] / "metrics.json");
  const std::string c0 = slurp(runs[0] / "model.ckpt"), c1 = slurp(runs[1] / "model.ckpt");
  fs::remove_all(root);
  report(7, "determinism", ran && !m0.empty() && !c0.empty() && m0 == m1 && c0 == c1,
         fmt("gen->train->eval twice: metrics JSON %s (%zu bytes), checkpoint %s (%zu bytes)",
             m0 == m1 ? "identical" : "differs", m0.size(), c0 == c1 ? "identical" : "differs", c0.size()));
}

void memorization() {
  const auto t0 = Clock::now();
  model::DspnConfig c = model::DspnConfig::tiny();
  c.n_unit = 65;
  Rng rng(42);
  std::vector<model::EncodedSample> data;
  for (std::size_t i = 0; i < 64; ++i) data.push_back(random_sample(rng, c, 1 + i));
  model::Model m = model::make_dspn(c, 42);
  train::TrainConfig cfg;
  cfg.epochs = 300;
  cfg.unit_dropout = 0.0;
  cfg.adv_dropout = 0.0;
  const auto result = train::train(m, data, {}, cfg);
  const auto r = train::evaluate(m, data);
  report(8, "memorization", r.acc >= 0.95,
         fmt("tiny DSPN on 64 samples, 300 epochs: train ACC %.4f >= 0.95, loss %.4f -> %.4f, %.1f s", r.acc,
             result.initial_train_loss, r.loss, seconds_since(t0)));
}

}  // namespace

int main() {
  gradient_correctness();
  metric_oracle();
  label_rule();
  learning_and_intents();
  invariant_suites();
  determinism();
  memorization();
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
