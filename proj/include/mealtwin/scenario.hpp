#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mealtwin/hexgrid.hpp"
#include "mealtwin/rng.hpp"

namespace mealtwin {

inline constexpr const char* kScenarioSchema = "mealtwin.scenario/1";

struct ScenarioConfig {
  ServiceRegion region;
  // (restaurant grid, hour of day) -> expected orders per hour
  std::map<std::pair<GridId, int>, double> hourly_rates;
  // restaurant grid -> probability over household grids (indexed by grid id)
  std::map<GridId, std::vector<double>> od_probs;
  int fleet_size = 25;
  int shift_start_hour = 19;
  int shift_minutes = 120;
  int day_of_week = 5;  // 0 = Monday
  double prep_mean_min = 10.0;
  double prep_var = 2.0;
  double prep_noise_var = 1.0;
  double overdue_limit_min = 10.0;
  double idle_threshold_min = 5.0;
  int max_delivery_tasks = 2;
  std::uint64_t seed = 2024;

  int hour_of(int shift_minute) const { return shift_start_hour + shift_minute / 60; }

  /// Throws ConfigError when the rate table has no entry for (grid, hour).
  double rate(GridId grid, int hour) const;
  bool has_rate(GridId grid, int hour) const { return hourly_rates.count({grid, hour}) != 0; }

  /// Throws ConfigError on any invariant violation.
  void validate() const;
};

/// The default desk-scale scenario: 5x5 region, nine restaurant grids,
/// ~63 orders/hour, 25 couriers.
ScenarioConfig default_scenario(std::uint64_t seed = 2024);

enum class OrderStatus { pending, assigned, picked_up, delivered, overdue };

const char* to_string(OrderStatus s);

struct Order {
  int id = 0;
  int placed_at = 0;  // shift minute
  GridId restaurant = 0;
  GridId household = 0;
  double est_prep = 0.0;     // tau-hat
  double actual_prep = 0.0;  // tau
  OrderStatus status = OrderStatus::pending;
  std::optional<int> courier;
  std::optional<int> assigned_at;
  std::optional<double> courier_arrival;  // t^c_o
  std::optional<double> pickup_time;
  std::optional<double> delivered_time;

  double ready_time() const { return placed_at + actual_prep; }
  double est_ready() const { return placed_at + est_prep; }
};

struct PrepSample {
  double estimated = 0.0;
  double actual = 0.0;
};

PrepSample sample_prep(const ScenarioConfig& config, Rng& rng);

/// Orders placed at shift minute `minute`. `next_order_id` is advanced by the
/// number of orders returned.
std::vector<Order> sample_orders(const ScenarioConfig& config, int minute, Rng& rng,
                                 int& next_order_id);

/// Counts-only variant used by history synthesis and the lag warm-up:
/// (restaurant, household) pairs for one minute at hour `hour`.
std::vector<std::pair<GridId, GridId>> sample_arrivals(const ScenarioConfig& config, int hour,
                                                       Rng& rng);

// Minute-resolution civil timestamp.
struct Timestamp {
  std::int64_t epoch_minutes = 0;  // minutes since 1970-01-01T00:00

  static Timestamp from_civil(int year, unsigned month, unsigned day, int hour, int minute);
  static Timestamp parse(const std::string& iso);  // "YYYY-MM-DDTHH:MM"
  std::string iso() const;
  std::int64_t day_index() const;  // days since epoch
  int hour() const;
  int minute_of_day() const;
  int day_of_week() const;  // 0 = Monday

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

struct TransactionRecord {
  Timestamp timestamp;
  GridId restaurant = 0;
  GridId household = 0;
};

struct RateEstimate {
  std::map<std::pair<GridId, int>, double> hourly_rates;
  std::map<GridId, std::vector<double>> od_probs;
  std::vector<GridId> uniform_fallback;  // origins with no observed orders
  int shift_days = 0;
};

/// Mean hourly counts per observed shift-day and empirical OD frequencies.
RateEstimate estimate_rates(const std::vector<TransactionRecord>& history,
                            const ServiceRegion& region);

/// Synthetic transaction history: one shift-day per week on the configured
/// weekday, covering every hour present in the rate table.
std::vector<TransactionRecord> synth_history(const ScenarioConfig& config, int num_weeks, Rng& rng);

void write_transactions_csv(std::ostream& out, const std::vector<TransactionRecord>& records);
std::vector<TransactionRecord> read_transactions_csv(std::istream& in);

void to_json(nlohmann::json& j, const ScenarioConfig& config);
void from_json(const nlohmann::json& j, ScenarioConfig& config);

ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const std::string& path, const ScenarioConfig& config);

}  // namespace mealtwin
