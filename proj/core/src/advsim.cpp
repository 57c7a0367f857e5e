#include "dspn/advsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace dspn::sim {

using nlohmann::json;

namespace {

std::vector<double> make_weights(std::initializer_list<std::pair<Indicator, double>> entries) {
  std::vector<double> w(kIndicatorCount, 0.0);
  for (auto [ind, v] : entries) w[idx(ind)] = v;
  return w;
}

}  // namespace

void IntentArchetype::validate() const {
  if (weight_mean.size() != kIndicatorCount || weight_std.size() != kIndicatorCount)
    throw ConfigError("archetype '" + name + "': weight vectors must have " + std::to_string(kIndicatorCount) +
                      " entries");
  for (double s : weight_std)
    if (s < 0.0) throw ConfigError("archetype '" + name + "': weight_std must be >= 0");
  if (!(constraints.min_clicks > 0.0 && constraints.max_cost > 0.0 && constraints.max_ppc > 0.0))
    throw ConfigError("archetype '" + name + "': alpha, beta, gamma must be > 0");
  if (constraint_spread < 0.0 || utility_noise_std < 0.0 || activity_rate < 0.0 || market_scale <= 0.0 ||
      initial_bid_scale <= 0.0)
    throw ConfigError("archetype '" + name + "': invalid scale parameter");
}

double lagrangian_bias(std::span<const double> w, const ConstraintParams& c) {
  return -(w[idx(Indicator::Click)] * c.min_clicks + w[idx(Indicator::Cost)] * c.max_cost +
           w[idx(Indicator::Ppc)] * c.max_ppc);
}

void MarketParams::validate() const {
  if (!(saturation_exponent > 0.0)) throw ConfigError("market: saturation exponent must be > 0");
  if (noise_std < 0.0) throw ConfigError("market: noise_std must be >= 0");
  for (const auto& t : tags) {
    if (!(t.capacity > 0.0 && t.half_bid > 0.0 && t.ppc_slope > 0.0))
      throw ConfigError("market: capacity, half_bid and ppc slope must be > 0");
    if (!(t.ctr > 0.0 && t.ctr < 1.0 && t.cvr > 0.0 && t.cvr < 1.0))
      throw ConfigError("market: ctr and cvr must lie in (0,1)");
  }
}

DailyReport market_response(std::span<const double> bids, std::span<const double> premiums,
                            const MarketParams& params, Rng* rng) {
  if (bids.size() != params.tags.size())
    throw std::invalid_argument("market_response: " + std::to_string(bids.size()) + " bids for " +
                                std::to_string(params.tags.size()) + " tags");
  if (premiums.size() != params.positions.size())
    throw std::invalid_argument("market_response: premium count does not match positions");

  double lift = 1.0;
  for (std::size_t p = 0; p < premiums.size(); ++p) {
    if (premiums[p] < 0.0) throw std::invalid_argument("market_response: negative premium rate");
    lift += premiums[p] * params.positions[p].lift;
  }

  const double eta = params.saturation_exponent;
  double pv = 0, click = 0, cost = 0, paynum = 0, payamt = 0;
  for (std::size_t t = 0; t < bids.size(); ++t) {
    if (bids[t] < 0.0) throw std::invalid_argument("market_response: negative bid " + std::to_string(bids[t]));
    if (bids[t] == 0.0) continue;
    const TagMarket& m = params.tags[t];
    const double b = bids[t] * lift;
    const double be = std::pow(b, eta);
    double tag_pv = m.capacity * be / (be + std::pow(m.half_bid, eta));
    if (rng != nullptr && params.noise_std > 0.0) tag_pv *= rng->lognormal_unit_mean(params.noise_std);
    const double tag_click = tag_pv * m.ctr;
    const double tag_cost = tag_click * m.ppc_slope * b;
    const double tag_paynum = tag_click * m.cvr;
    pv += tag_pv;
    click += tag_click;
    cost += tag_cost;
    paynum += tag_paynum;
    payamt += tag_paynum * m.item_price;
  }

  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  DailyReport r;
  r.indicators.assign(kIndicatorCount, 0.0);
  r.indicators[idx(Indicator::Pv)] = pv;
  r.indicators[idx(Indicator::Click)] = click;
  r.indicators[idx(Indicator::Cost)] = cost;
  r.indicators[idx(Indicator::Ctr)] = ratio(click, pv);
  r.indicators[idx(Indicator::Cvr)] = ratio(paynum, click);
  r.indicators[idx(Indicator::Ppc)] = ratio(cost, click);
  r.indicators[idx(Indicator::PayNum)] = paynum;
  r.indicators[idx(Indicator::PayAmt)] = payamt;
  r.indicators[idx(Indicator::Roi)] = ratio(payamt, cost);
  return r;
}

double lagrangian_value(const DailyReport& report, const GroundTruthAdvertiser& advertiser) {
  const auto w = advertiser.indicator_weights();
  double u = 0.0;
  for (std::size_t i = 0; i < kIndicatorCount; ++i) u += w[i] * report.indicators[i];
  return u + advertiser.bias();
}

// ---------------------------------------------------------------------------
// Agent policy

namespace {

double expected_utility(const UnitState& s, const MarketParams& market, const GroundTruthAdvertiser& adv) {
  return lagrangian_value(market_response(s.bids, s.premiums, market, nullptr), adv);
}

std::vector<std::size_t> slots_where(const std::vector<double>& v, bool active) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if ((v[i] > 0.0) == active) out.push_back(i);
  return out;
}

double mean_positive(const std::vector<double>& v, double fallback) {
  double total = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (x > 0.0) {
      total += x;
      ++n;
    }
  return n ? total / static_cast<double>(n) : fallback;
}

struct Logged {
  ActionEvent event;
  bool is_tag;
};

}  // namespace

StepResult advertiser_step(const GroundTruthAdvertiser& advertiser, const UnitState& state,
                           const MarketParams& market, const PolicyParams& policy, Rng& rng) {
  if (state.churned) throw std::invalid_argument("advertiser_step: unit already churned");
  StepResult result;
  result.state = state;
  UnitState& s = result.state;

  const std::uint64_t proposals = rng.poisson(advertiser.activity_rate);
  if (proposals == 0) return result;

  std::vector<Logged> log;
  const auto base_weights = policy.mix.weights();
  double current = expected_utility(s, market, advertiser);

  for (std::uint64_t k = 0; k < proposals; ++k) {
    const auto active_tags = slots_where(s.bids, true);
    const auto idle_tags = slots_where(s.bids, false);
    const auto active_pos = slots_where(s.premiums, true);
    const auto idle_pos = slots_where(s.premiums, false);

    auto weights = base_weights;
    if (idle_tags.empty()) weights[0] = 0.0;
    if (active_tags.empty()) weights[1] = 0.0;
    if (active_tags.size() < 2) weights[2] = 0.0;
    if (idle_pos.empty()) weights[3] = 0.0;
    if (active_pos.empty()) weights[4] = weights[5] = 0.0;
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) break;

    const auto kind = static_cast<ActionKind>(rng.categorical(weights));
    const double factor = rng.bernoulli(0.5) ? 1.0 + policy.step_size : 1.0 - policy.step_size;
    const bool is_tag = is_tag_action(kind);

    std::size_t slot = 0;
    double before = 0.0, after = 0.0;
    switch (kind) {
      case ActionKind::AddTag:
        slot = idle_tags[rng.below(idle_tags.size())];
        after = mean_positive(s.bids, policy.default_bid);
        break;
      case ActionKind::ChangeTagBid:
        slot = active_tags[rng.below(active_tags.size())];
        before = s.bids[slot];
        after = before * factor;
        break;
      case ActionKind::DeleteTag:
        slot = active_tags[rng.below(active_tags.size())];
        before = s.bids[slot];
        break;
      case ActionKind::AddPosition:
        slot = idle_pos[rng.below(idle_pos.size())];
        after = policy.default_premium;
        break;
      case ActionKind::ChangePositionRate:
        slot = active_pos[rng.below(active_pos.size())];
        before = s.premiums[slot];
        after = before * factor;
        break;
      case ActionKind::DeletePosition:
        slot = active_pos[rng.below(active_pos.size())];
        before = s.premiums[slot];
        break;
    }

    std::vector<double>& values = is_tag ? s.bids : s.premiums;
    const int target = is_tag ? market.tags[slot].tag_type : market.positions[slot].position_type;
    values[slot] = after;
    log.push_back({ActionEvent{kind, target, before, after, 0.0}, is_tag});

    const double proposed = expected_utility(s, market, advertiser);
    if (proposed >= current) {
      current = proposed;
      continue;
    }
    // Revert: the inverse action restores the previous value.
    values[slot] = before;
    ActionKind inverse = kind;
    if (kind == ActionKind::AddTag) inverse = ActionKind::DeleteTag;
    if (kind == ActionKind::DeleteTag) inverse = ActionKind::AddTag;
    if (kind == ActionKind::AddPosition) inverse = ActionKind::DeletePosition;
    if (kind == ActionKind::DeletePosition) inverse = ActionKind::AddPosition;
    log.push_back({ActionEvent{inverse, target, after, before, 0.0}, is_tag});
  }

  std::vector<double> times(log.size());
  for (double& t : times) t = rng.uniform();
  std::sort(times.begin(), times.end());
  for (std::size_t i = 0; i < log.size(); ++i) {
    log[i].event.time = times[i];
    (log[i].is_tag ? result.tag_events : result.pos_events).push_back(log[i].event);
  }
  return result;
}

bool churn_decision(const GroundTruthAdvertiser& advertiser, std::span<const double> recent_utilities) {
  if (recent_utilities.empty()) throw std::invalid_argument("churn_decision: empty utility window");
  const double total = std::accumulate(recent_utilities.begin(), recent_utilities.end(), 0.0);
  return total / static_cast<double>(recent_utilities.size()) < advertiser.churn_threshold;
}

// ---------------------------------------------------------------------------
// Configuration

SimConfig SimConfig::defaults() {
  using I = Indicator;
  SimConfig c;

  IntentArchetype active;
  active.name = "active";
  active.weight_mean = make_weights({{I::Pv, 0.0034}, {I::Click, 0.08}, {I::Cost, -0.05}, {I::PayNum, 1.6}});
  active.weight_std = make_weights({{I::Pv, 0.0007}, {I::Click, 0.016}, {I::Cost, 0.01}, {I::PayNum, 0.32}});
  active.constraints = {50.0, 100.0, 1.0};
  active.churn_threshold = 40.0;
  active.utility_noise_std = 5.0;
  active.activity_rate = 4.0;

  IntentArchetype impression;
  impression.name = "impression_maximizer";
  impression.weight_mean = make_weights({{I::Pv, 0.0068}, {I::Cost, -0.05}, {I::Ctr, 1200.0}, {I::Ppc, -50.0}});
  impression.weight_std = make_weights({{I::Pv, 0.0014}, {I::Cost, 0.01}, {I::Ctr, 240.0}, {I::Ppc, 10.0}});
  impression.constraints = {80.0, 120.0, 1.0};
  impression.churn_threshold = 108.0;
  impression.utility_noise_std = 8.0;
  impression.activity_rate = 3.0;

  IntentArchetype revenue;
  revenue.name = "revenue_maximizer";
  revenue.weight_mean = make_weights({{I::Cost, -0.05}, {I::Cvr, 800.0}, {I::Roi, 4.7}});
  revenue.weight_std = make_weights({{I::Cost, 0.01}, {I::Cvr, 160.0}, {I::Roi, 0.94}});
  revenue.constraints = {20.0, 200.0, 2.0};
  revenue.churn_threshold = 82.0;
  revenue.utility_noise_std = 6.0;
  revenue.activity_rate = 3.0;

  IntentArchetype tail;
  tail.name = "tail";
  tail.weight_mean = make_weights({{I::Click, 0.04}, {I::Cost, -0.2}});
  tail.weight_std = make_weights({{I::Click, 0.008}, {I::Cost, 0.04}});
  tail.constraints = {10.0, 20.0, 0.5};
  tail.churn_threshold = 1.4;
  tail.utility_noise_std = 3.8;
  tail.activity_rate = 1.5;
  tail.market_scale = 0.35;
  tail.initial_bid_scale = 0.7;

  c.archetypes = {active, impression, revenue, tail};
  c.mixture = {0.25, 0.25, 0.25, 0.25};
  return c;
}

void SimConfig::validate() const {
  if (n_days == 0) throw ConfigError("sim: n_days must be > 0");
  if (n_advertisers == 0 || units_per_advertiser == 0) throw ConfigError("sim: empty population");
  if (archetypes.empty() || mixture.empty()) throw ConfigError("sim: empty archetype mixture");
  if (archetypes.size() != mixture.size()) throw ConfigError("sim: mixture length differs from archetype count");
  double total = 0.0;
  for (double m : mixture) {
    if (m < 0.0) throw ConfigError("sim: negative mixture weight");
    total += m;
  }
  if (!(total > 0.0)) throw ConfigError("sim: mixture weights sum to zero");
  for (const auto& a : archetypes) a.validate();
  if (n_tag_types == 0 || tags_per_unit == 0 || tags_per_unit > n_tag_types)
    throw ConfigError("sim: tags_per_unit must be in [1, n_tag_types]");
  if (initial_active_tags == 0 || initial_active_tags > tags_per_unit)
    throw ConfigError("sim: initial_active_tags must be in [1, tags_per_unit]");
  if (n_categories == 0) throw ConfigError("sim: n_categories must be > 0");
  if (churn_window == 0) throw ConfigError("sim: churn_window must be > 0");
  if (!(category_affinity >= 0.0 && category_affinity <= 1.0))
    throw ConfigError("sim: category_affinity must be in [0,1]");
  if (!(saturation_exponent > 0.0) || pv_noise_std < 0.0 || !(base_capacity > 0.0))
    throw ConfigError("sim: invalid market scale");
  if (!(policy.step_size > 0.0 && policy.step_size < 1.0)) throw ConfigError("sim: step_size must be in (0,1)");
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct TagTypeBase {
  double ctr, cvr, price, half_bid, ppc_slope;
};

struct World {
  std::vector<TagTypeBase> tag_types;
  std::vector<double> position_lift;
};

World make_world(const SimConfig& config, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xA11CE5ULL << 32));
  World w;
  w.tag_types.resize(config.n_tag_types);
  for (auto& t : w.tag_types) {
    t.ctr = rng.uniform(0.015, 0.06);
    t.cvr = rng.uniform(0.01, 0.08);
    t.price = 50.0 * rng.lognormal_unit_mean(0.5);
    t.half_bid = rng.uniform(0.6, 1.6);
    t.ppc_slope = rng.uniform(0.35, 0.7);
  }
  w.position_lift.resize(config.n_position_types);
  for (double& l : w.position_lift) l = rng.uniform(0.5, 1.5);
  return w;
}

GroundTruthAdvertiser draw_advertiser(const SimConfig& config, int advertiser_id, std::uint64_t stream_seed,
                                      Rng& rng) {
  GroundTruthAdvertiser a;
  a.advertiser_id = advertiser_id;
  a.rng_seed = stream_seed;
  a.archetype_id = static_cast<int>(rng.categorical(config.mixture));
  a.category_id = static_cast<int>(rng.below(config.n_categories)) + 1;
  const std::size_t n_arch = config.archetypes.size();
  const auto arch_id = static_cast<std::size_t>(a.archetype_id);
  if (rng.bernoulli(config.category_affinity) && arch_id < config.n_categories) {
    const std::size_t block = (config.n_categories - arch_id + n_arch - 1) / n_arch;
    a.category_id = static_cast<int>(arch_id + n_arch * rng.below(block)) + 1;
  }
  const IntentArchetype& arch = config.archetypes[static_cast<std::size_t>(a.archetype_id)];
  std::vector<double> w(kIndicatorCount);
  for (std::size_t i = 0; i < kIndicatorCount; ++i) w[i] = rng.normal(arch.weight_mean[i], arch.weight_std[i]);
  a.constraints = {arch.constraints.min_clicks * rng.lognormal_unit_mean(arch.constraint_spread),
                   arch.constraints.max_cost * rng.lognormal_unit_mean(arch.constraint_spread),
                   arch.constraints.max_ppc * rng.lognormal_unit_mean(arch.constraint_spread)};
  const double b = lagrangian_bias(w, a.constraints);
  a.true_weights = std::move(w);
  a.true_weights.push_back(b);
  a.churn_threshold = arch.churn_threshold;
  a.utility_noise_std = arch.utility_noise_std;
  a.activity_rate = arch.activity_rate;
  return a;
}

MarketParams draw_market(const SimConfig& config, const World& world, const IntentArchetype& arch, Rng& rng) {
  MarketParams m;
  m.saturation_exponent = config.saturation_exponent;
  m.noise_std = config.pv_noise_std;
  std::vector<int> types(config.n_tag_types);
  std::iota(types.begin(), types.end(), 1);
  // Partial Fisher-Yates: the first tags_per_unit entries are a uniform draw.
  for (std::size_t i = 0; i < config.tags_per_unit; ++i)
    std::swap(types[i], types[i + rng.below(types.size() - i)]);
  const double unit_scale = rng.lognormal_unit_mean(0.5);
  for (std::size_t i = 0; i < config.tags_per_unit; ++i) {
    const TagTypeBase& base = world.tag_types[static_cast<std::size_t>(types[i] - 1)];
    TagMarket t;
    t.tag_type = types[i];
    t.capacity = config.base_capacity * arch.market_scale * unit_scale * rng.lognormal_unit_mean(0.3);
    t.half_bid = base.half_bid * rng.lognormal_unit_mean(0.1);
    t.ctr = std::min(0.5, base.ctr * rng.lognormal_unit_mean(0.2));
    t.cvr = std::min(0.5, base.cvr * rng.lognormal_unit_mean(0.2));
    t.item_price = base.price * rng.lognormal_unit_mean(0.2);
    t.ppc_slope = base.ppc_slope * rng.lognormal_unit_mean(0.1);
    m.tags.push_back(t);
  }
  for (std::size_t p = 0; p < config.n_position_types; ++p)
    m.positions.push_back({static_cast<int>(p) + 1, world.position_lift[p]});
  return m;
}

UnitState draw_initial_state(const SimConfig& config, const IntentArchetype& arch, Rng& rng) {
  UnitState s;
  s.bids.assign(config.tags_per_unit, 0.0);
  for (std::size_t i = 0; i < config.initial_active_tags; ++i)
    s.bids[i] = config.policy.default_bid * arch.initial_bid_scale * rng.lognormal_unit_mean(0.4);
  s.premiums.assign(config.n_position_types, 0.0);
  for (double& p : s.premiums)
    if (rng.bernoulli(0.5)) p = config.policy.default_premium * rng.lognormal_unit_mean(0.3);
  return s;
}

UltimateActions ultimate_of(const UnitState& s, const MarketParams& m) {
  UltimateActions u;
  for (std::size_t i = 0; i < s.bids.size(); ++i)
    if (s.bids[i] > 0.0) u.tags.emplace_back(m.tags[i].tag_type, s.bids[i]);
  for (std::size_t i = 0; i < s.premiums.size(); ++i)
    if (s.premiums[i] > 0.0) u.positions.emplace_back(m.positions[i].position_type, s.premiums[i]);
  return u;
}

}  // namespace

UnitSimulation simulate_unit(const GroundTruthAdvertiser& advertiser, int unit_id, const MarketParams& market,
                             UnitState initial, const SimConfig& config, Rng& rng) {
  UnitSimulation out;
  UnitTrace& trace = out.trace;
  trace.unit_id = unit_id;
  trace.advertiser_id = advertiser.advertiser_id;
  trace.category_id = advertiser.category_id;
  trace.days.reserve(config.n_days);

  UnitState state = std::move(initial);
  std::vector<double> perceived;
  for (std::size_t d = 0; d < config.n_days; ++d) {
    DayRecord day;
    if (!state.churned) {
      StepResult step = advertiser_step(advertiser, state, market, config.policy, rng);
      state = std::move(step.state);
      day.tag_actions = std::move(step.tag_events);
      day.pos_actions = std::move(step.pos_events);
    }
    day.report = market_response(state.bids, state.premiums, market, &rng);
    day.report.day_index = static_cast<int>(d);
    day.ultimate = ultimate_of(state, market);
    trace.days.push_back(std::move(day));

    out.kept_utilities.push_back(
        lagrangian_value(market_response(state.bids, state.premiums, market, nullptr), advertiser));
    perceived.push_back(lagrangian_value(trace.days.back().report, advertiser) +
                        (advertiser.utility_noise_std > 0.0 ? rng.normal(0.0, advertiser.utility_noise_std) : 0.0));

    if (!state.churned && d >= config.churn_check_start) {
      const std::size_t w = std::min(config.churn_window, perceived.size());
      if (churn_decision(advertiser, std::span<const double>(perceived).last(w))) {
        state.churned = true;
        std::fill(state.bids.begin(), state.bids.end(), 0.0);
        std::fill(state.premiums.begin(), state.premiums.end(), 0.0);
        trace.churn_day = static_cast<int>(d) + 1;
      }
    }
  }
  return out;
}

GeneratedMarket generate_dataset(const SimConfig& config, std::uint64_t seed, unsigned threads) {
  config.validate();
  const World world = make_world(config, seed);
  const std::size_t n = config.n_advertisers;
  std::vector<GroundTruthAdvertiser> advertisers(n);
  std::vector<std::vector<UnitTrace>> per_adv(n);

  auto run_one = [&](std::size_t i) {
    const int adv_id = static_cast<int>(i) + 1;
    const std::uint64_t stream = mix_seed(seed, static_cast<std::uint64_t>(adv_id));
    Rng rng(stream);
    GroundTruthAdvertiser adv = draw_advertiser(config, adv_id, stream, rng);
    const IntentArchetype& arch = config.archetypes[static_cast<std::size_t>(adv.archetype_id)];
    for (std::size_t u = 0; u < config.units_per_advertiser; ++u) {
      const int unit_id = static_cast<int>(i * config.units_per_advertiser + u) + 1;
      MarketParams market = draw_market(config, world, arch, rng);
      UnitState init = draw_initial_state(config, arch, rng);
      per_adv[i].push_back(simulate_unit(adv, unit_id, market, std::move(init), config, rng).trace);
    }
    advertisers[i] = std::move(adv);
  };

  threads = std::max(1u, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += threads) run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  GeneratedMarket out;
  out.advertisers = std::move(advertisers);
  for (auto& units : per_adv)
    for (auto& tr : units) out.traces.push_back(std::move(tr));
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json archetype_to_json(const IntentArchetype& a) {
  return json{{"name", a.name},
              {"weight_mean", a.weight_mean},
              {"weight_std", a.weight_std},
              {"constraints",
               {{"min_clicks", a.constraints.min_clicks},
                {"max_cost", a.constraints.max_cost},
                {"max_ppc", a.constraints.max_ppc}}},
              {"constraint_spread", a.constraint_spread},
              {"churn_threshold", a.churn_threshold},
              {"utility_noise_std", a.utility_noise_std},
              {"activity_rate", a.activity_rate},
              {"market_scale", a.market_scale},
              {"initial_bid_scale", a.initial_bid_scale}};
}

IntentArchetype archetype_from_json(const json& j) {
  IntentArchetype a;
  a.name = j.at("name").get<std::string>();
  a.weight_mean = j.at("weight_mean").get<std::vector<double>>();
  a.weight_std = j.value("weight_std", std::vector<double>(kIndicatorCount, 0.0));
  const json& c = j.at("constraints");
  a.constraints = {c.at("min_clicks").get<double>(), c.at("max_cost").get<double>(), c.at("max_ppc").get<double>()};
  a.constraint_spread = j.value("constraint_spread", a.constraint_spread);
  a.churn_threshold = j.at("churn_threshold").get<double>();
  a.utility_noise_std = j.value("utility_noise_std", a.utility_noise_std);
  a.activity_rate = j.value("activity_rate", a.activity_rate);
  a.market_scale = j.value("market_scale", a.market_scale);
  a.initial_bid_scale = j.value("initial_bid_scale", a.initial_bid_scale);
  return a;
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

SimConfig sim_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim config: ") + e.what());
  }
  SimConfig c = SimConfig::defaults();
  try {
    read_if(j, "n_advertisers", c.n_advertisers);
    read_if(j, "units_per_advertiser", c.units_per_advertiser);
    read_if(j, "n_days", c.n_days);
    read_if(j, "n_tag_types", c.n_tag_types);
    read_if(j, "n_position_types", c.n_position_types);
    read_if(j, "n_categories", c.n_categories);
    read_if(j, "category_affinity", c.category_affinity);
    read_if(j, "tags_per_unit", c.tags_per_unit);
    read_if(j, "initial_active_tags", c.initial_active_tags);
    read_if(j, "saturation_exponent", c.saturation_exponent);
    read_if(j, "pv_noise_std", c.pv_noise_std);
    read_if(j, "base_capacity", c.base_capacity);
    read_if(j, "churn_window", c.churn_window);
    read_if(j, "churn_check_start", c.churn_check_start);
    if (j.contains("archetypes")) {
      c.archetypes.clear();
      for (const auto& a : j.at("archetypes")) c.archetypes.push_back(archetype_from_json(a));
      c.mixture.assign(c.archetypes.size(), 1.0 / static_cast<double>(c.archetypes.size()));
    }
    read_if(j, "mixture", c.mixture);
    if (j.contains("policy")) {
      const json& p = j.at("policy");
      read_if(p, "step_size", c.policy.step_size);
      read_if(p, "default_premium", c.policy.default_premium);
      read_if(p, "default_bid", c.policy.default_bid);
      if (p.contains("mix")) {
        const json& m = p.at("mix");
        read_if(m, "add_tag", c.policy.mix.add_tag);
        read_if(m, "change_tag_bid", c.policy.mix.change_tag_bid);
        read_if(m, "delete_tag", c.policy.mix.delete_tag);
        read_if(m, "add_position", c.policy.mix.add_position);
        read_if(m, "change_position_rate", c.policy.mix.change_position_rate);
        read_if(m, "delete_position", c.policy.mix.delete_position);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string sim_config_to_json(const SimConfig& c) {
  json arch = json::array();
  for (const auto& a : c.archetypes) arch.push_back(archetype_to_json(a));
  const auto& m = c.policy.mix;
  json j{{"n_advertisers", c.n_advertisers},
         {"units_per_advertiser", c.units_per_advertiser},
         {"n_days", c.n_days},
         {"n_tag_types", c.n_tag_types},
         {"n_position_types", c.n_position_types},
         {"n_categories", c.n_categories},
         {"category_affinity", c.category_affinity},
         {"tags_per_unit", c.tags_per_unit},
         {"initial_active_tags", c.initial_active_tags},
         {"saturation_exponent", c.saturation_exponent},
         {"pv_noise_std", c.pv_noise_std},
         {"base_capacity", c.base_capacity},
         {"churn_window", c.churn_window},
         {"churn_check_start", c.churn_check_start},
         {"archetypes", arch},
         {"mixture", c.mixture},
         {"policy",
          {{"step_size", c.policy.step_size},
           {"default_premium", c.policy.default_premium},
           {"default_bid", c.policy.default_bid},
           {"mix",
            {{"add_tag", m.add_tag},
             {"change_tag_bid", m.change_tag_bid},
             {"delete_tag", m.delete_tag},
             {"add_position", m.add_position},
             {"change_position_rate", m.change_position_rate},
             {"delete_position", m.delete_position}}}}}};
  return j.dump(2);
}

std::string advertiser_to_json(const GroundTruthAdvertiser& a) {
  json j{{"advertiser_id", a.advertiser_id},
         {"archetype_id", a.archetype_id},
         {"category_id", a.category_id},
         {"true_weights", a.true_weights},
         {"constraints",
          {{"min_clicks", a.constraints.min_clicks},
           {"max_cost", a.constraints.max_cost},
           {"max_ppc", a.constraints.max_ppc}}},
         {"churn_threshold", a.churn_threshold},
         {"utility_noise_std", a.utility_noise_std},
         {"activity_rate", a.activity_rate},
         {"rng_seed", a.rng_seed}};
  return j.dump();
}

GroundTruthAdvertiser advertiser_from_json(const std::string& line) {
  const json j = json::parse(line);
  GroundTruthAdvertiser a;
  a.advertiser_id = j.at("advertiser_id").get<int>();
  a.archetype_id = j.at("archetype_id").get<int>();
  a.category_id = j.at("category_id").get<int>();
  a.true_weights = j.at("true_weights").get<std::vector<double>>();
  const json& c = j.at("constraints");
  a.constraints = {c.at("min_clicks").get<double>(), c.at("max_cost").get<double>(), c.at("max_ppc").get<double>()};
  a.churn_threshold = j.at("churn_threshold").get<double>();
  a.utility_noise_std = j.at("utility_noise_std").get<double>();
  a.activity_rate = j.at("activity_rate").get<double>();
  a.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return a;
}

}  // namespace dspn::sim
