#pragma once

// Labeled, padded, normalized training samples built from unit traces, and
// the JSON Lines formats they are stored in.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dspn/records.hpp"

namespace dspn::data {

/// Malformed or inconsistent input data. `line()` is 1-based, 0 if unknown.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct DatasetConfig {
  std::size_t window = 10;   // l: observation and follow-up length
  double cost_floor = 10.0;  // epsilon of the satisfaction rule
  double min_cost = 10.0;    // observation-window spend filter
  std::size_t n_a = 8;       // sequential-action slots per group per day
  double split_ratio = 0.9;
};

/// Fixed n_a action slots; mask[i] == 1 marks a real event.
struct ActionSlots {
  std::vector<ActionEvent> events;
  std::vector<std::uint8_t> mask;

  std::size_t valid() const;
  friend bool operator==(const ActionSlots&, const ActionSlots&) = default;
};

/// Keeps the newest n_a events (oldest are truncated) and masks empty slots.
ActionSlots pad_actions(std::span<const ActionEvent> events, std::size_t n_a);

struct SampleDay {
  DailyReport report;
  UltimateActions ultimate;
  ActionSlots tag_actions;
  ActionSlots pos_actions;
  friend bool operator==(const SampleDay&, const SampleDay&) = default;
};

struct Sample {
  int unit_id = 0;
  int advertiser_id = 0;
  int category_id = 0;
  std::vector<SampleDay> days;
  int label = 0;  // 1 satisfied, 0 unsatisfied
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// 0 (unsatisfied) iff total cost over [l0, l0 + l) is <= eps, else 1.
int label_sample(const UnitTrace& trace, std::size_t l0, std::size_t l, double eps);

double window_cost(const UnitTrace& trace, std::size_t begin, std::size_t end);

/// Keeps units whose cost over [l0 - l, l0) is strictly greater than min_cost.
std::vector<UnitTrace> filter_units(std::vector<UnitTrace> traces, double min_cost, std::size_t l0,
                                    std::size_t l);

/// Observation window [l0 - l, l0) of a trace, labeled from [l0, l0 + l).
Sample make_sample(const UnitTrace& trace, std::size_t l0, const DatasetConfig& config);

/// Filter, window and label every trace with l0 = l.
std::vector<Sample> build_samples(std::span<const UnitTrace> traces, const DatasetConfig& config);

/// Checks window length, slot counts and report indicator ranges.
void validate_sample(const Sample& s, std::size_t window, std::size_t n_a);

// ---------------------------------------------------------------------------
// Normalization

enum class ValueChannel : std::size_t { Bid, Premium, BidDelta, PremiumDelta };
inline constexpr std::size_t kValueChannelCount = 4;
inline constexpr double kStdFloor = 1e-6;

/// Statistics fitted on the training split. Indicators, ultimate bids and
/// premium rates are z-scored (population std, floored). Action values are
/// divided by the RMS of their channel's deltas with no shift, so a missing
/// value stays 0 and the normalized delta is delta / rms.
struct Normalizer {
  std::vector<double> indicator_mean;
  std::vector<double> indicator_std;
  std::array<double, kValueChannelCount> channel_mean{};
  std::array<double, kValueChannelCount> channel_std{1.0, 1.0, 1.0, 1.0};

  double indicator(std::size_t j, double v) const { return (v - indicator_mean[j]) / indicator_std[j]; }
  double channel(ValueChannel c, double v) const {
    const auto i = static_cast<std::size_t>(c);
    return (v - channel_mean[i]) / channel_std[i];
  }
};

Normalizer normalize_fit(std::span<const Sample> training);
Sample normalize_apply(const Normalizer& n, const Sample& s);
Sample denormalize(const Normalizer& n, const Sample& s);

// ---------------------------------------------------------------------------
// Vocabularies

/// Dense ids starting at 1; id 0 is reserved for out-of-vocabulary values.
class Vocab {
 public:
  /// Gives `raw` the next free id if it has none yet.
  void add(int raw);
  int lookup(int raw) const;
  std::size_t size() const { return ids_.size() + 1; }
  const std::map<int, int>& entries() const { return ids_; }

 private:
  std::map<int, int> ids_;
};

struct Vocabularies {
  Vocab unit;
  Vocab advertiser;
  Vocab category;
  Vocab tag;
  Vocab position;
};

Vocabularies build_vocab(std::span<const Sample> samples);
Vocabularies build_vocab(std::span<const UnitTrace> traces);

// ---------------------------------------------------------------------------
// Splitting

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Seeded shuffle, then the first round(ratio * n) samples go to train.
Split split(std::vector<Sample> samples, double ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// JSON Lines

std::string sample_to_json(const Sample& s);
Sample sample_from_json(const std::string& line, std::size_t n_a, std::size_t line_no = 0);
void write_samples(std::ostream& out, std::span<const Sample> samples);
std::vector<Sample> read_samples(std::istream& in, std::size_t n_a);

std::string trace_to_json(const UnitTrace& t);
UnitTrace trace_from_json(const std::string& line, std::size_t line_no = 0);
void write_traces(std::ostream& out, std::span<const UnitTrace> traces);
std::vector<UnitTrace> read_traces(std::istream& in);

/// Normalizer and vocabularies as one JSON sidecar document.
std::string preprocessing_to_json(const Normalizer& n, const Vocabularies& v);
std::pair<Normalizer, Vocabularies> preprocessing_from_json(const std::string& text);

}  // namespace dspn::data
