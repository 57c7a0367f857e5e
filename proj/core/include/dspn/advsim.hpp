#pragma once

// Synthetic advertiser market.
//
// Each advertiser carries a hidden weight vector over the report indicators
// and constraint levels (min clicks, max cost, max PPC). Its daily utility is
// the Lagrangian  w^T I + b  with  b = -(w_click*alpha + w_cost*beta +
// w_ppc*gamma). Agents hill-climb that utility through tag/position actions,
// and stop spending once their recent utility falls below a threshold.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dspn/records.hpp"
#include "dspn/rng.hpp"

namespace dspn::sim {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConstraintParams {
  double min_clicks = 1.0;  // alpha
  double max_cost = 1.0;    // beta
  double max_ppc = 1.0;     // gamma
};

struct IntentArchetype {
  std::string name;
  /// Signed weights over the kIndicatorCount indicators.
  std::vector<double> weight_mean;
  std::vector<double> weight_std;
  ConstraintParams constraints;
  /// Relative spread of each advertiser's constraint levels around `constraints`.
  double constraint_spread = 0.2;
  double churn_threshold = 0.0;
  /// Std of the perceived-utility noise that feeds the churn decision.
  double utility_noise_std = 0.0;
  double activity_rate = 3.0;
  /// Multiplies tag capacity for this archetype's units.
  double market_scale = 1.0;
  /// Multiplies the initial bids of this archetype's units.
  double initial_bid_scale = 1.0;

  void validate() const;
};

struct GroundTruthAdvertiser {
  int advertiser_id = 0;
  int archetype_id = 0;
  int category_id = 0;
  /// kIndicatorCount signed weights followed by the bias b.
  std::vector<double> true_weights;
  ConstraintParams constraints;
  double churn_threshold = 0.0;
  double utility_noise_std = 0.0;
  double activity_rate = 0.0;
  std::uint64_t rng_seed = 0;

  std::span<const double> indicator_weights() const {
    return std::span<const double>(true_weights).first(kIndicatorCount);
  }
  double bias() const { return true_weights.back(); }
};

/// b = -(w_click*alpha + w_cost*beta + w_ppc*gamma) for signed weights.
double lagrangian_bias(std::span<const double> indicator_weights, const ConstraintParams& c);

struct TagMarket {
  int tag_type = 0;
  double capacity = 1000.0;  // max daily pv
  double half_bid = 1.0;     // bid at half saturation
  double ctr = 0.03;
  double cvr = 0.05;
  double item_price = 50.0;
  double ppc_slope = 0.5;  // kappa: ppc = kappa * effective bid
};

struct PositionMarket {
  int position_type = 0;
  /// Effective-bid lift per unit of premium rate.
  double lift = 1.0;
};

struct MarketParams {
  std::vector<TagMarket> tags;
  std::vector<PositionMarket> positions;
  double saturation_exponent = 1.0;  // eta
  double noise_std = 0.0;            // lognormal pv noise

  void validate() const;
};

/// One day's market outcome for per-tag bids and per-position premium rates.
/// A null rng (or zero noise_std) gives the noise-free expectation.
DailyReport market_response(std::span<const double> bids, std::span<const double> premiums,
                            const MarketParams& params, Rng* rng);

/// w^T I + b with the advertiser's stored weights.
double lagrangian_value(const DailyReport& report, const GroundTruthAdvertiser& advertiser);

struct UnitState {
  std::vector<double> bids;      // per tag slot; 0 = tag not active
  std::vector<double> premiums;  // per position slot; 0 = position not active
  bool churned = false;
};

/// Relative proposal frequencies for the six action kinds.
struct ActionMix {
  double add_tag = 0.08;
  double change_tag_bid = 0.6;
  double delete_tag = 0.07;
  double add_position = 0.05;
  double change_position_rate = 0.15;
  double delete_position = 0.05;

  std::vector<double> weights() const {
    return {add_tag, change_tag_bid, delete_tag, add_position, change_position_rate, delete_position};
  }
};

struct PolicyParams {
  double step_size = 0.1;  // multiplicative bid / rate proposal
  double default_premium = 0.2;
  double default_bid = 1.0;
  ActionMix mix;
};

struct StepResult {
  std::vector<ActionEvent> tag_events;
  std::vector<ActionEvent> pos_events;
  UnitState state;
};

/// One day of stochastic hill-climbing on the noise-free Lagrangian. Every
/// proposal is logged; rejected ones are followed by a reverting event.
StepResult advertiser_step(const GroundTruthAdvertiser& advertiser, const UnitState& state,
                           const MarketParams& market, const PolicyParams& policy, Rng& rng);

/// True iff the mean of the recent utilities is below the churn threshold.
bool churn_decision(const GroundTruthAdvertiser& advertiser, std::span<const double> recent_utilities);

struct SimConfig {
  std::size_t n_advertisers = 1000;
  std::size_t units_per_advertiser = 5;
  std::size_t n_days = 20;
  std::size_t n_tag_types = 40;
  std::size_t n_position_types = 4;
  std::size_t n_categories = 12;
  /// Probability that an advertiser's category comes from its archetype's
  /// block (categories c with (c - 1) % n_archetypes == archetype); otherwise
  /// the category is uniform.
  double category_affinity = 0.8;
  std::size_t tags_per_unit = 6;
  std::size_t initial_active_tags = 3;
  std::vector<IntentArchetype> archetypes;
  std::vector<double> mixture;
  double saturation_exponent = 1.0;
  double pv_noise_std = 0.15;
  double base_capacity = 2000.0;
  /// Days of utility averaged by the churn decision.
  std::size_t churn_window = 5;
  /// First day index whose report is followed by a churn decision.
  std::size_t churn_check_start = 9;
  PolicyParams policy;

  /// Four archetypes: active, impression maximizer, revenue maximizer, tail.
  static SimConfig defaults();
  void validate() const;
};

struct GeneratedMarket {
  std::vector<GroundTruthAdvertiser> advertisers;
  std::vector<UnitTrace> traces;
};

/// Reproducible for a given seed; each advertiser draws from its own stream
/// seeded by mix_seed(seed, advertiser_id), so `threads` never changes output.
GeneratedMarket generate_dataset(const SimConfig& config, std::uint64_t seed, unsigned threads = 1);

/// Per-unit simulation, exposed for tests. Returns the trace and the daily
/// noise-free utilities of the kept states.
struct UnitSimulation {
  UnitTrace trace;
  std::vector<double> kept_utilities;
};
UnitSimulation simulate_unit(const GroundTruthAdvertiser& advertiser, int unit_id, const MarketParams& market,
                             UnitState initial, const SimConfig& config, Rng& rng);

// JSON codecs.
SimConfig sim_config_from_json(const std::string& text);
std::string sim_config_to_json(const SimConfig& config);
std::string advertiser_to_json(const GroundTruthAdvertiser& a);
GroundTruthAdvertiser advertiser_from_json(const std::string& line);

}  // namespace dspn::sim
