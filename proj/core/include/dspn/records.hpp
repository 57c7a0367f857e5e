#pragma once

// Record types shared by the simulator and the dataset pipeline: one day of
// an ad unit's reports and actions.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace dspn {

inline constexpr std::size_t kIndicatorCount = 9;

/// Canonical indicator order of every report vector.
enum class Indicator : std::size_t { Pv, Click, Cost, Ctr, Cvr, Ppc, PayNum, PayAmt, Roi };

inline constexpr std::array<std::string_view, kIndicatorCount> kIndicatorNames{
    "pv", "click", "cost", "ctr", "cvr", "ppc", "paynum", "payamt", "roi"};

constexpr std::size_t idx(Indicator i) { return static_cast<std::size_t>(i); }

struct DailyReport {
  int day_index = 0;
  std::vector<double> indicators;

  double operator[](Indicator i) const { return indicators[idx(i)]; }
  friend bool operator==(const DailyReport&, const DailyReport&) = default;
};

enum class ActionKind : std::uint8_t {
  AddTag,
  ChangeTagBid,
  DeleteTag,
  AddPosition,
  ChangePositionRate,
  DeletePosition,
};

inline constexpr std::size_t kActionKindCount = 6;
inline constexpr std::array<std::string_view, kActionKindCount> kActionKindNames{
    "AddTag", "ChangeTagBid", "DeleteTag", "AddPosition", "ChangePositionRate", "DeletePosition"};

constexpr bool is_tag_action(ActionKind k) {
  return k == ActionKind::AddTag || k == ActionKind::ChangeTagBid || k == ActionKind::DeleteTag;
}

std::optional<ActionKind> action_kind_from_name(std::string_view name);

/// One sequential action. Add events carry only new_value, Delete events only
/// the current value (stored in old_value), Change events both.
struct ActionEvent {
  ActionKind kind = ActionKind::ChangeTagBid;
  int target = 0;
  double old_value = 0.0;
  double new_value = 0.0;
  double time = 0.0;

  /// Value after the action minus the value before it.
  double delta() const { return new_value - old_value; }
  friend bool operator==(const ActionEvent&, const ActionEvent&) = default;
};

/// End-of-day strategy: (tag type, bid) and (position type, premium rate).
struct UltimateActions {
  std::vector<std::pair<int, double>> tags;
  std::vector<std::pair<int, double>> positions;
  friend bool operator==(const UltimateActions&, const UltimateActions&) = default;
};

struct DayRecord {
  DailyReport report;
  UltimateActions ultimate;
  std::vector<ActionEvent> tag_actions;
  std::vector<ActionEvent> pos_actions;
  friend bool operator==(const DayRecord&, const DayRecord&) = default;
};

struct UnitTrace {
  int unit_id = 0;
  int advertiser_id = 0;
  int category_id = 0;
  std::vector<DayRecord> days;
  /// First day with all bids at zero, if the advertiser churned.
  std::optional<int> churn_day;
  friend bool operator==(const UnitTrace&, const UnitTrace&) = default;
};

}  // namespace dspn
