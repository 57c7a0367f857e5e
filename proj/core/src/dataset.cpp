#include "dspn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "dspn/rng.hpp"
#include "json.hpp"

namespace dspn::data {

using nlohmann::json;

std::size_t ActionSlots::valid() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

ActionSlots pad_actions(std::span<const ActionEvent> events, std::size_t n_a) {
  if (n_a == 0) throw std::invalid_argument("pad_actions: n_a must be >= 1");
  ActionSlots slots;
  slots.events.assign(n_a, ActionEvent{});
  slots.mask.assign(n_a, 0);
  const std::size_t keep = std::min(n_a, events.size());
  const std::size_t first = events.size() - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    slots.events[i] = events[first + i];
    slots.mask[i] = 1;
  }
  return slots;
}

// ---------------------------------------------------------------------------
// Labels and windows

double window_cost(const UnitTrace& trace, std::size_t begin, std::size_t end) {
  if (end > trace.days.size() || begin > end)
    throw DataError("unit " + std::to_string(trace.unit_id) + ": trace of " + std::to_string(trace.days.size()) +
                    " days does not cover [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
  double total = 0.0;
  for (std::size_t d = begin; d < end; ++d) total += trace.days[d].report[Indicator::Cost];
  return total;
}

int label_sample(const UnitTrace& trace, std::size_t l0, std::size_t l, double eps) {
  if (l0 < l || l0 + l > trace.days.size())
    throw DataError("unit " + std::to_string(trace.unit_id) + ": insufficient trace length " +
                    std::to_string(trace.days.size()) + " for l0=" + std::to_string(l0) +
                    " l=" + std::to_string(l));
  return window_cost(trace, l0, l0 + l) <= eps ? 0 : 1;
}

std::vector<UnitTrace> filter_units(std::vector<UnitTrace> traces, double min_cost, std::size_t l0,
                                    std::size_t l) {
  if (l0 < l) throw std::invalid_argument("filter_units: l0 < l");
  std::erase_if(traces, [&](const UnitTrace& t) { return !(window_cost(t, l0 - l, l0) > min_cost); });
  return traces;
}

Sample make_sample(const UnitTrace& trace, std::size_t l0, const DatasetConfig& config) {
  const std::size_t l = config.window;
  Sample s;
  s.unit_id = trace.unit_id;
  s.advertiser_id = trace.advertiser_id;
  s.category_id = trace.category_id;
  s.label = label_sample(trace, l0, l, config.cost_floor);
  s.days.reserve(l);
  for (std::size_t d = l0 - l; d < l0; ++d) {
    const DayRecord& src = trace.days[d];
    SampleDay day;
    day.report = src.report;
    day.report.day_index = static_cast<int>(d - (l0 - l));
    day.ultimate = src.ultimate;
    day.tag_actions = pad_actions(src.tag_actions, config.n_a);
    day.pos_actions = pad_actions(src.pos_actions, config.n_a);
    s.days.push_back(std::move(day));
  }
  return s;
}

std::vector<Sample> build_samples(std::span<const UnitTrace> traces, const DatasetConfig& config) {
  const std::size_t l = config.window;
  std::vector<Sample> out;
  for (const UnitTrace& t : traces) {
    if (t.days.size() < 2 * l)
      throw DataError("unit " + std::to_string(t.unit_id) + ": trace shorter than 2l = " + std::to_string(2 * l));
    if (!(window_cost(t, 0, l) > config.min_cost)) continue;
    out.push_back(make_sample(t, l, config));
  }
  return out;
}

void validate_sample(const Sample& s, std::size_t window, std::size_t n_a) {
  const std::string who = "unit " + std::to_string(s.unit_id) + ": ";
  if (s.label != 0 && s.label != 1) throw DataError(who + "label must be 0 or 1");
  if (s.days.size() != window)
    throw DataError(who + "expected " + std::to_string(window) + " days, got " + std::to_string(s.days.size()));
  for (const SampleDay& d : s.days) {
    for (const ActionSlots* g : {&d.tag_actions, &d.pos_actions})
      if (g->events.size() != n_a || g->mask.size() != n_a) throw DataError(who + "action group is not n_a slots");
    const auto& v = d.report.indicators;
    for (double x : v)
      if (!std::isfinite(x)) throw DataError(who + "non-finite indicator");
    if (v.size() != kIndicatorCount) continue;  // reduced test configs skip the range checks
    constexpr double tol = 1e-9;
    const auto at = [&](Indicator i) { return v[idx(i)]; };
    if (at(Indicator::Click) < 0.0 || at(Indicator::Pv) + tol < at(Indicator::Click))
      throw DataError(who + "requires pv >= click >= 0");
    if (at(Indicator::Cost) < 0.0 || at(Indicator::Roi) < 0.0) throw DataError(who + "negative cost or roi");
    for (Indicator i : {Indicator::Ctr, Indicator::Cvr})
      if (at(i) < 0.0 || at(i) > 1.0 + tol) throw DataError(who + "ctr/cvr outside [0,1]");
  }
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
};

// Two-pass population statistics; the one-pass sums above only feed the RMS.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 1.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m) * (x - m);
  var /= static_cast<double>(xs.size());
  return {m, std::max(std::sqrt(var), kStdFloor)};
}

template <typename F>
void for_each_event(const SampleDay& d, F f) {
  for (std::size_t i = 0; i < d.tag_actions.events.size(); ++i)
    if (d.tag_actions.mask[i]) f(d.tag_actions.events[i], ValueChannel::BidDelta);
  for (std::size_t i = 0; i < d.pos_actions.events.size(); ++i)
    if (d.pos_actions.mask[i]) f(d.pos_actions.events[i], ValueChannel::PremiumDelta);
}

Sample transform(const Normalizer& n, const Sample& s, bool forward) {
  Sample out = s;
  auto ind = [&](std::size_t j, double v) {
    return forward ? (v - n.indicator_mean[j]) / n.indicator_std[j] : v * n.indicator_std[j] + n.indicator_mean[j];
  };
  auto chan = [&](ValueChannel c, double v) {
    const auto i = static_cast<std::size_t>(c);
    return forward ? (v - n.channel_mean[i]) / n.channel_std[i] : v * n.channel_std[i] + n.channel_mean[i];
  };
  for (SampleDay& d : out.days) {
    if (d.report.indicators.size() != n.indicator_mean.size())
      throw DataError("normalizer fitted on " + std::to_string(n.indicator_mean.size()) +
                      " indicators, sample has " + std::to_string(d.report.indicators.size()));
    for (std::size_t j = 0; j < d.report.indicators.size(); ++j)
      d.report.indicators[j] = ind(j, d.report.indicators[j]);
    for (auto& [id, bid] : d.ultimate.tags) bid = chan(ValueChannel::Bid, bid);
    for (auto& [id, rate] : d.ultimate.positions) rate = chan(ValueChannel::Premium, rate);
    for (ActionSlots* g : {&d.tag_actions, &d.pos_actions}) {
      const ValueChannel c = g == &d.tag_actions ? ValueChannel::BidDelta : ValueChannel::PremiumDelta;
      for (std::size_t i = 0; i < g->events.size(); ++i) {
        if (!g->mask[i]) continue;
        g->events[i].old_value = chan(c, g->events[i].old_value);
        g->events[i].new_value = chan(c, g->events[i].new_value);
      }
    }
  }
  return out;
}

}  // namespace

Normalizer normalize_fit(std::span<const Sample> training) {
  if (training.size() < 2) throw DataError("normalize_fit requires at least 2 samples");
  const std::size_t n_i = training.front().days.front().report.indicators.size();
  std::vector<std::vector<double>> columns(n_i);
  std::vector<double> bids, premiums;
  std::array<Moments, kValueChannelCount> deltas{};

  for (const Sample& s : training)
    for (const SampleDay& d : s.days) {
      if (d.report.indicators.size() != n_i) throw DataError("inconsistent indicator count");
      for (std::size_t j = 0; j < n_i; ++j) columns[j].push_back(d.report.indicators[j]);
      for (const auto& [id, bid] : d.ultimate.tags) bids.push_back(bid);
      for (const auto& [id, rate] : d.ultimate.positions) premiums.push_back(rate);
      for_each_event(d, [&](const ActionEvent& e, ValueChannel c) { deltas[static_cast<std::size_t>(c)].add(e.delta()); });
    }

  Normalizer n;
  for (const auto& col : columns) {
    const auto [m, sd] = mean_std(col);
    n.indicator_mean.push_back(m);
    n.indicator_std.push_back(sd);
  }
  std::tie(n.channel_mean[0], n.channel_std[0]) = mean_std(bids);
  std::tie(n.channel_mean[1], n.channel_std[1]) = mean_std(premiums);
  for (auto c : {ValueChannel::BidDelta, ValueChannel::PremiumDelta}) {
    const auto i = static_cast<std::size_t>(c);
    n.channel_mean[i] = 0.0;
    n.channel_std[i] =
        deltas[i].n ? std::max(std::sqrt(deltas[i].sum_sq / static_cast<double>(deltas[i].n)), kStdFloor) : 1.0;
  }
  return n;
}

Sample normalize_apply(const Normalizer& n, const Sample& s) { return transform(n, s, true); }
Sample denormalize(const Normalizer& n, const Sample& s) { return transform(n, s, false); }

// ---------------------------------------------------------------------------
// Vocabularies

void Vocab::add(int raw) { ids_.try_emplace(raw, static_cast<int>(ids_.size()) + 1); }

int Vocab::lookup(int raw) const {
  const auto it = ids_.find(raw);
  return it == ids_.end() ? 0 : it->second;
}

namespace {

// Renumbers in sorted raw order so ids do not depend on input order.
void finalize(Vocab& v) {
  const std::map<int, int> old = v.entries();
  v = Vocab{};
  for (const auto& [raw, id] : old) v.add(raw);
}

template <typename Day>
void add_day(Vocabularies& v, const Day& d) {
  for (const auto& [id, bid] : d.ultimate.tags) v.tag.add(id);
  for (const auto& [id, rate] : d.ultimate.positions) v.position.add(id);
}

}  // namespace

Vocabularies build_vocab(std::span<const Sample> samples) {
  Vocabularies v;
  for (const Sample& s : samples) {
    v.unit.add(s.unit_id);
    v.advertiser.add(s.advertiser_id);
    v.category.add(s.category_id);
    for (const SampleDay& d : s.days) {
      add_day(v, d);
      for_each_event(d, [&](const ActionEvent& e, ValueChannel c) {
        (c == ValueChannel::BidDelta ? v.tag : v.position).add(e.target);
      });
    }
  }
  for (Vocab* x : {&v.unit, &v.advertiser, &v.category, &v.tag, &v.position}) finalize(*x);
  return v;
}

Vocabularies build_vocab(std::span<const UnitTrace> traces) {
  Vocabularies v;
  for (const UnitTrace& t : traces) {
    v.unit.add(t.unit_id);
    v.advertiser.add(t.advertiser_id);
    v.category.add(t.category_id);
    for (const DayRecord& d : t.days) {
      add_day(v, d);
      for (const auto& e : d.tag_actions) v.tag.add(e.target);
      for (const auto& e : d.pos_actions) v.position.add(e.target);
    }
  }
  for (Vocab* x : {&v.unit, &v.advertiser, &v.category, &v.tag, &v.position}) finalize(*x);
  return v;
}

// ---------------------------------------------------------------------------
// Split

Split split(std::vector<Sample> samples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must be in (0,1)");
  Rng rng(mix_seed(seed, 0x5117));
  rng.shuffle(samples);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(samples.size())));
  Split out;
  out.train.assign(std::make_move_iterator(samples.begin()),
                   std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)));
  out.test.assign(std::make_move_iterator(samples.begin() + static_cast<std::ptrdiff_t>(n_train)),
                  std::make_move_iterator(samples.end()));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json event_to_json(const ActionEvent& e) {
  return json{{"kind", kActionKindNames[static_cast<std::size_t>(e.kind)]},
              {"target", e.target},
              {"old", e.old_value},
              {"new", e.new_value},
              {"time", e.time}};
}

ActionEvent event_from_json(const json& j) {
  ActionEvent e;
  const auto kind = action_kind_from_name(j.at("kind").get<std::string>());
  if (!kind) throw DataError("unknown action kind '" + j.at("kind").get<std::string>() + "'");
  e.kind = *kind;
  e.target = j.at("target").get<int>();
  e.old_value = j.value("old", 0.0);
  e.new_value = j.value("new", 0.0);
  e.time = j.value("time", 0.0);
  return e;
}

json pairs_to_json(const std::vector<std::pair<int, double>>& v) {
  json a = json::array();
  for (const auto& [id, x] : v) a.push_back(json::array({id, x}));
  return a;
}

std::vector<std::pair<int, double>> pairs_from_json(const json& j) {
  std::vector<std::pair<int, double>> out;
  for (const auto& p : j) out.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
  return out;
}

json ultimate_to_json(const UltimateActions& u) {
  return json{{"tags", pairs_to_json(u.tags)}, {"positions", pairs_to_json(u.positions)}};
}

UltimateActions ultimate_from_json(const json& j) {
  return UltimateActions{pairs_from_json(j.at("tags")), pairs_from_json(j.at("positions"))};
}

json valid_events(const ActionSlots& slots) {
  json a = json::array();
  for (std::size_t i = 0; i < slots.events.size(); ++i)
    if (slots.mask[i]) a.push_back(event_to_json(slots.events[i]));
  return a;
}

std::vector<ActionEvent> events_from_json(const json& j) {
  std::vector<ActionEvent> out;
  for (const auto& e : j) out.push_back(event_from_json(e));
  return out;
}

json events_to_json(const std::vector<ActionEvent>& v) {
  json a = json::array();
  for (const auto& e : v) a.push_back(event_to_json(e));
  return a;
}

template <typename F>
auto parse_line(const std::string& line, std::size_t line_no, F f) {
  try {
    return f(json::parse(line));
  } catch (const DataError& e) {
    throw DataError(e.what(), line_no);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed JSON: ") + e.what(), line_no);
  }
}

template <typename F>
void for_each_line(std::istream& in, F f) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    f(line, line_no);
  }
}

}  // namespace

std::string sample_to_json(const Sample& s) {
  json days = json::array();
  for (const SampleDay& d : s.days)
    days.push_back(json{{"report", d.report.indicators},
                        {"ultimate", ultimate_to_json(d.ultimate)},
                        {"tag_actions", valid_events(d.tag_actions)},
                        {"pos_actions", valid_events(d.pos_actions)}});
  return json{{"unit_id", s.unit_id},
              {"advertiser_id", s.advertiser_id},
              {"category_id", s.category_id},
              {"days", days},
              {"label", s.label}}
      .dump();
}

Sample sample_from_json(const std::string& line, std::size_t n_a, std::size_t line_no) {
  return parse_line(line, line_no, [n_a](const json& j) {
    Sample s;
    s.unit_id = j.at("unit_id").get<int>();
    s.advertiser_id = j.at("advertiser_id").get<int>();
    s.category_id = j.at("category_id").get<int>();
    s.label = j.at("label").get<int>();
    int day_index = 0;
    for (const auto& jd : j.at("days")) {
      SampleDay d;
      d.report.day_index = day_index++;
      d.report.indicators = jd.at("report").get<std::vector<double>>();
      d.ultimate = ultimate_from_json(jd.at("ultimate"));
      const auto tags = events_from_json(jd.at("tag_actions"));
      const auto pos = events_from_json(jd.at("pos_actions"));
      if (tags.size() > n_a || pos.size() > n_a) throw DataError("more than n_a actions in a day");
      d.tag_actions = pad_actions(tags, n_a);
      d.pos_actions = pad_actions(pos, n_a);
      s.days.push_back(std::move(d));
    }
    return s;
  });
}

void write_samples(std::ostream& out, std::span<const Sample> samples) {
  for (const Sample& s : samples) out << sample_to_json(s) << '\n';
}

std::vector<Sample> read_samples(std::istream& in, std::size_t n_a) {
  std::vector<Sample> out;
  for_each_line(in, [&](const std::string& line, std::size_t no) { out.push_back(sample_from_json(line, n_a, no)); });
  return out;
}

std::string trace_to_json(const UnitTrace& t) {
  json days = json::array();
  for (const DayRecord& d : t.days)
    days.push_back(json{{"day_index", d.report.day_index},
                        {"report", d.report.indicators},
                        {"ultimate", ultimate_to_json(d.ultimate)},
                        {"tag_actions", events_to_json(d.tag_actions)},
                        {"pos_actions", events_to_json(d.pos_actions)}});
  json j{{"unit_id", t.unit_id},
         {"advertiser_id", t.advertiser_id},
         {"category_id", t.category_id},
         {"days", days},
         {"churn_day", t.churn_day ? json(*t.churn_day) : json(nullptr)}};
  return j.dump();
}

UnitTrace trace_from_json(const std::string& line, std::size_t line_no) {
  return parse_line(line, line_no, [](const json& j) {
    UnitTrace t;
    t.unit_id = j.at("unit_id").get<int>();
    t.advertiser_id = j.at("advertiser_id").get<int>();
    t.category_id = j.at("category_id").get<int>();
    for (const auto& jd : j.at("days")) {
      DayRecord d;
      d.report.day_index = jd.at("day_index").get<int>();
      d.report.indicators = jd.at("report").get<std::vector<double>>();
      d.ultimate = ultimate_from_json(jd.at("ultimate"));
      d.tag_actions = events_from_json(jd.at("tag_actions"));
      d.pos_actions = events_from_json(jd.at("pos_actions"));
      t.days.push_back(std::move(d));
    }
    if (j.contains("churn_day") && !j.at("churn_day").is_null()) t.churn_day = j.at("churn_day").get<int>();
    return t;
  });
}

void write_traces(std::ostream& out, std::span<const UnitTrace> traces) {
  for (const UnitTrace& t : traces) out << trace_to_json(t) << '\n';
}

std::vector<UnitTrace> read_traces(std::istream& in) {
  std::vector<UnitTrace> out;
  for_each_line(in, [&](const std::string& line, std::size_t no) { out.push_back(trace_from_json(line, no)); });
  return out;
}

namespace {

json vocab_to_json(const Vocab& v) {
  json a = json::array();
  for (const auto& [raw, id] : v.entries()) a.push_back(raw);
  return a;
}

Vocab vocab_from_json(const json& j) {
  Vocab v;
  for (const auto& raw : j) v.add(raw.get<int>());
  finalize(v);
  return v;
}

}  // namespace

std::string preprocessing_to_json(const Normalizer& n, const Vocabularies& v) {
  json j{{"normalizer",
          {{"indicator_mean", n.indicator_mean},
           {"indicator_std", n.indicator_std},
           {"channel_mean", n.channel_mean},
           {"channel_std", n.channel_std}}},
         {"vocab",
          {{"unit", vocab_to_json(v.unit)},
           {"advertiser", vocab_to_json(v.advertiser)},
           {"category", vocab_to_json(v.category)},
           {"tag", vocab_to_json(v.tag)},
           {"position", vocab_to_json(v.position)}}}};
  return j.dump(2);
}

std::pair<Normalizer, Vocabularies> preprocessing_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Normalizer n;
    const json& jn = j.at("normalizer");
    n.indicator_mean = jn.at("indicator_mean").get<std::vector<double>>();
    n.indicator_std = jn.at("indicator_std").get<std::vector<double>>();
    n.channel_mean = jn.at("channel_mean").get<std::array<double, kValueChannelCount>>();
    n.channel_std = jn.at("channel_std").get<std::array<double, kValueChannelCount>>();
    const json& jv = j.at("vocab");
    Vocabularies v{vocab_from_json(jv.at("unit")), vocab_from_json(jv.at("advertiser")),
                   vocab_from_json(jv.at("category")), vocab_from_json(jv.at("tag")),
                   vocab_from_json(jv.at("position"))};
    return {std::move(n), std::move(v)};
  } catch (const json::exception& e) {
    throw DataError(std::string("preprocessing sidecar: ") + e.what());
  }
}

}  // namespace dspn::data
