#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "dspn/advsim.hpp"
#include "dspn/dataset.hpp"

using namespace dspn;
using namespace dspn::data;

namespace {

UnitTrace trace_with_costs(const std::vector<double>& costs, int unit = 1) {
  UnitTrace t;
  t.unit_id = unit;
  t.advertiser_id = 100 + unit;
  t.category_id = 3;
  for (std::size_t d = 0; d < costs.size(); ++d) {
    DayRecord day;
    day.report.day_index = static_cast<int>(d);
    day.report.indicators.assign(kIndicatorCount, 0.0);
    day.report.indicators[idx(Indicator::Cost)] = costs[d];
    t.days.push_back(day);
  }
  return t;
}

ActionEvent change(int target, double old_v, double new_v, double time) {
  return {ActionKind::ChangeTagBid, target, old_v, new_v, time};
}

Sample one_day_sample(std::vector<double> indicators, int unit = 1) {
  Sample s;
  s.unit_id = unit;
  s.advertiser_id = unit;
  s.category_id = 1;
  SampleDay d;
  d.report.indicators = std::move(indicators);
  d.tag_actions = pad_actions({}, 2);
  d.pos_actions = pad_actions({}, 2);
  s.days.push_back(d);
  return s;
}

const sim::GeneratedMarket& default_market() {
  static const sim::GeneratedMarket g = sim::generate_dataset(sim::SimConfig::defaults(), 42, 4);
  return g;
}

}  // namespace

TEST_CASE("label rule") {
  const std::vector<double> obs(10, 50.0);
  auto with_followup = [&](std::vector<double> f) {
    std::vector<double> all = obs;
    all.insert(all.end(), f.begin(), f.end());
    return trace_with_costs(all);
  };
  CHECK(label_sample(with_followup(std::vector<double>(10, 0.0)), 10, 10, 10.0) == 0);
  CHECK(label_sample(with_followup(std::vector<double>(10, 100.0)), 10, 10, 10.0) == 1);
  CHECK(label_sample(with_followup({10, 0, 0, 0, 0, 0, 0, 0, 0, 0}), 10, 10, 10.0) == 0);
  CHECK(label_sample(with_followup({10.001, 0, 0, 0, 0, 0, 0, 0, 0, 0}), 10, 10, 10.0) == 1);
  CHECK_THROWS_AS(label_sample(trace_with_costs(std::vector<double>(15, 1.0)), 10, 10, 10.0), DataError);
  CHECK_THROWS_AS(label_sample(trace_with_costs(std::vector<double>(20, 1.0)), 5, 10, 10.0), DataError);
}

TEST_CASE("label rule agrees with a direct re-implementation on random traces") {
  Rng rng(2024);
  std::size_t zeros = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t l = 1 + rng.below(12);
    const std::size_t l0 = l + rng.below(5);
    const std::size_t days = l0 + l + rng.below(4);
    std::vector<double> costs(days);
    for (double& c : costs) {
      const double u = rng.uniform();
      c = u < 0.4 ? 0.0 : u < 0.6 ? static_cast<double>(rng.below(4)) : rng.uniform(0.0, 5.0);
    }
    const double eps = rng.bernoulli(0.5) ? 10.0 : rng.uniform(0.0, 20.0);
    double total = 0.0;
    for (std::size_t d = l0; d < l0 + l; ++d) total += costs[d];
    const int want = total <= eps ? 0 : 1;
    zeros += want == 0;
    REQUIRE(label_sample(trace_with_costs(costs), l0, l, eps) == want);
  }
  CHECK(zeros > 1000);
  CHECK(zeros < 9000);
}

TEST_CASE("observation filter") {
  auto unit = [](double window_cost, int id) {
    std::vector<double> c(20, 0.0);
    c[3] = window_cost;
    return trace_with_costs(c, id);
  };
  const auto kept = filter_units({unit(10.0, 1), unit(10.01, 2), unit(500.0, 3)}, 10.0, 10, 10);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].unit_id == 2);
  CHECK(kept[1].unit_id == 3);
  CHECK(filter_units({}, 10.0, 10, 10).empty());
}

TEST_CASE("pad actions") {
  std::vector<ActionEvent> events{change(1, 1, 2, 0.1), change(2, 2, 3, 0.2), change(3, 3, 4, 0.3)};
  const auto slots = pad_actions(events, 8);
  CHECK(slots.events.size() == 8);
  CHECK(slots.valid() == 3);
  CHECK(std::vector<std::uint8_t>(slots.mask.begin(), slots.mask.begin() + 3) == std::vector<std::uint8_t>{1, 1, 1});
  CHECK(std::count(slots.mask.begin(), slots.mask.end(), 0) == 5);

  const auto cut = pad_actions(events, 2);
  REQUIRE(cut.valid() == 2);
  CHECK(cut.events[0].target == 2);
  CHECK(cut.events[1].target == 3);

  CHECK(change(1, 1.5, 2.25, 0).delta() == 0.75);
}

TEST_CASE("normalization") {
  SUBCASE("two-point z-score and a constant column") {
    std::vector<double> a(kIndicatorCount, 5.0), b(kIndicatorCount, 5.0);
    a[0] = 0.0;
    b[0] = 2.0;
    const std::vector<Sample> train{one_day_sample(a), one_day_sample(b)};
    const Normalizer n = normalize_fit(train);
    CHECK(n.indicator_std[1] == kStdFloor);
    const Sample na = normalize_apply(n, train[0]);
    const Sample nb = normalize_apply(n, train[1]);
    CHECK(na.days[0].report.indicators[0] == doctest::Approx(-1.0));
    CHECK(nb.days[0].report.indicators[0] == doctest::Approx(1.0));
    CHECK(na.days[0].report.indicators[1] == 0.0);
  }

  SUBCASE("needs two samples") {
    const std::vector<Sample> one{one_day_sample(std::vector<double>(kIndicatorCount, 1.0))};
    CHECK_THROWS_AS(normalize_fit(one), DataError);
  }

  SUBCASE("recomputed statistics on the default training split") {
    const auto samples = build_samples(default_market().traces, DatasetConfig{});
    const Split sp = split(samples, 0.9, 42);
    const Normalizer n = normalize_fit(sp.train);
    std::vector<double> sum(kIndicatorCount, 0.0), sq(kIndicatorCount, 0.0);
    std::size_t count = 0;
    std::vector<Sample> normed;
    for (const auto& s : sp.train) normed.push_back(normalize_apply(n, s));
    for (const auto& s : normed)
      for (const auto& d : s.days) {
        ++count;
        for (std::size_t j = 0; j < kIndicatorCount; ++j) sum[j] += d.report.indicators[j];
      }
    for (std::size_t j = 0; j < kIndicatorCount; ++j) sum[j] /= static_cast<double>(count);
    for (const auto& s : normed)
      for (const auto& d : s.days)
        for (std::size_t j = 0; j < kIndicatorCount; ++j)
          sq[j] += (d.report.indicators[j] - sum[j]) * (d.report.indicators[j] - sum[j]);
    for (std::size_t j = 0; j < kIndicatorCount; ++j) {
      CHECK(std::abs(sum[j]) <= 1e-9);
      CHECK(std::sqrt(sq[j] / static_cast<double>(count)) == doctest::Approx(1.0).epsilon(1e-6));
    }

    // Inverse, and the delta channel of change events.
    for (std::size_t i = 0; i < 50; ++i) {
      const Sample back = denormalize(n, normed[i]);
      for (std::size_t d = 0; d < back.days.size(); ++d) {
        for (std::size_t j = 0; j < kIndicatorCount; ++j)
          CHECK(back.days[d].report.indicators[j] ==
                doctest::Approx(sp.train[i].days[d].report.indicators[j]).epsilon(1e-9));
        const auto& raw = sp.train[i].days[d].tag_actions;
        const auto& nz = normed[i].days[d].tag_actions;
        const double rms = n.channel_std[static_cast<std::size_t>(ValueChannel::BidDelta)];
        for (std::size_t k = 0; k < raw.events.size(); ++k) {
          if (!raw.mask[k]) continue;
          CHECK(nz.events[k].delta() == doctest::Approx(raw.events[k].delta() / rms).epsilon(1e-12));
          CHECK(back.days[d].tag_actions.events[k].new_value ==
                doctest::Approx(raw.events[k].new_value).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("vocabularies") {
  Vocab v;
  v.add(50);
  v.add(7);
  v.add(50);
  CHECK(v.size() == 3);
  CHECK(v.lookup(50) != v.lookup(7));
  CHECK(v.lookup(50) >= 1);
  CHECK(v.lookup(7) >= 1);
  CHECK(v.lookup(999) == 0);

  const auto samples = build_samples(default_market().traces, DatasetConfig{});
  const Split sp = split(samples, 0.9, 42);
  const Vocabularies voc = build_vocab(std::span<const Sample>(sp.train));
  std::set<int> train_units;
  for (const auto& s : sp.train) train_units.insert(s.unit_id);
  CHECK(voc.unit.size() == train_units.size() + 1);
  for (const auto& s : sp.test) CHECK(voc.unit.lookup(s.unit_id) == 0);
  std::set<int> ids;
  for (const auto& [raw, id] : voc.unit.entries()) ids.insert(id);
  CHECK(ids.size() == train_units.size());
  CHECK(*ids.begin() == 1);
}

TEST_CASE("split") {
  std::vector<Sample> s;
  for (int i = 0; i < 100; ++i) s.push_back(one_day_sample(std::vector<double>(kIndicatorCount, 0.0), i + 1));
  const Split a = split(s, 0.9, 7);
  CHECK(a.train.size() == 90);
  CHECK(a.test.size() == 10);
  std::set<int> ids;
  for (const auto& x : a.train) ids.insert(x.unit_id);
  for (const auto& x : a.test) ids.insert(x.unit_id);
  CHECK(ids.size() == 100);
  const Split b = split(s, 0.9, 7);
  CHECK(a.train == b.train);
  const Split c = split(s, 0.9, 8);
  CHECK_FALSE(a.train == c.train);
}

TEST_CASE("samples from the default dataset") {
  const DatasetConfig dc;
  const auto samples = build_samples(default_market().traces, dc);
  REQUIRE(!samples.empty());
  for (const auto& s : samples) {
    REQUIRE(s.days.size() == dc.window);
    for (std::size_t d = 0; d < dc.window; ++d) CHECK(s.days[d].report.day_index == static_cast<int>(d));
    CHECK((s.label == 0 || s.label == 1));
  }
  CHECK_THROWS_AS(build_samples(std::vector<UnitTrace>{trace_with_costs(std::vector<double>(15, 100.0))}, dc),
                  DataError);
}

TEST_CASE("json lines round trip") {
  const auto& traces = default_market().traces;
  std::stringstream ts;
  write_traces(ts, traces);
  const auto traces_back = read_traces(ts);
  CHECK(traces_back == traces);

  const DatasetConfig dc;
  const auto samples = build_samples(traces, dc);
  std::stringstream ss;
  write_samples(ss, samples);
  const auto samples_back = read_samples(ss, dc.n_a);
  CHECK(samples_back == samples);

  const Split sp = split(samples, 0.9, 1);
  const Normalizer n = normalize_fit(sp.train);
  const Vocabularies v = build_vocab(std::span<const Sample>(sp.train));
  const auto [n2, v2] = preprocessing_from_json(preprocessing_to_json(n, v));
  CHECK(n2.indicator_mean == n.indicator_mean);
  CHECK(n2.indicator_std == n.indicator_std);
  CHECK(n2.channel_std == n.channel_std);
  CHECK(v2.unit.entries() == v.unit.entries());
  CHECK(v2.tag.entries() == v.tag.entries());
}

TEST_CASE("malformed input reports its line") {
  std::stringstream in;
  in << trace_to_json(trace_with_costs(std::vector<double>(20, 1.0))) << "\n\n{\"unit_id\": oops}\n";
  try {
    read_traces(in);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("sample validation") {
  const DatasetConfig dc;
  auto s = build_samples(default_market().traces, dc).front();
  CHECK_NOTHROW(validate_sample(s, dc.window, dc.n_a));
  auto short_window = s;
  short_window.days.pop_back();
  CHECK_THROWS_AS(validate_sample(short_window, dc.window, dc.n_a), DataError);
  auto bad = s;
  bad.days[0].report.indicators[idx(Indicator::Ctr)] = 1.5;
  CHECK_THROWS_AS(validate_sample(bad, dc.window, dc.n_a), DataError);
}
