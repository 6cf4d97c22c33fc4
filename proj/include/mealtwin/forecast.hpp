#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mealtwin/hexgrid.hpp"
#include "mealtwin/scenario.hpp"

namespace mealtwin {

inline constexpr const char* kForecasterSchema = "mealtwin.gbt/1";
inline constexpr int kForecastWindow = 15;
inline constexpr std::size_t kNumLagFeatures = 6;

// Inputs of the short-term demand model. lags[0] is the most recent window.
struct LagFeatures {
  int day_of_week = 0;
  int hour_of_day = 0;
  std::array<double, 4> lags{};
  bool insufficient_history = false;

  std::array<double, kNumLagFeatures> as_vector() const {
    return {static_cast<double>(day_of_week), static_cast<double>(hour_of_day), lags[0], lags[1],
            lags[2], lags[3]};
  }
};

/// Per-grid arrival times on an absolute minute axis, with the earliest
/// minute the record is known to cover.
class ArrivalCounter {
 public:
  explicit ArrivalCounter(std::int64_t coverage_start = 0) : coverage_start_(coverage_start) {}

  void add(GridId grid, std::int64_t minute);
  /// Orders at `grid` with minute in [start, end).
  int count(GridId grid, std::int64_t start, std::int64_t end) const;
  std::int64_t coverage_start() const { return coverage_start_; }
  void set_coverage_start(std::int64_t m) { coverage_start_ = m; }

 private:
  std::map<GridId, std::vector<std::int64_t>> arrivals_;  // kept sorted
  std::int64_t coverage_start_;
};

/// Lag counts over the four 15-minute windows preceding `t` (half-open).
/// Windows reaching before the coverage start are zero-filled and flagged.
LagFeatures build_features(const ArrivalCounter& history, GridId grid, std::int64_t t,
                           int day_of_week, int hour_of_day);

/// Convenience overload for transaction history on the civil time axis.
LagFeatures build_features(const std::vector<TransactionRecord>& history, GridId grid, Timestamp t);

struct GbtParams {
  int rounds = 100;
  int max_depth = 4;
  double eta = 0.1;
  int min_leaf = 5;
  double lambda = 1.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(std::span<const double> x) const;
};

struct GbtEnsemble {
  std::vector<RegressionTree> trees;
  double base_score = 0.0;
  double eta = 0.1;
  GbtParams params;

  /// base_score + eta * sum of leaf values (unclamped).
  double predict_raw(std::span<const double> x) const;
};

struct ForecastSample {
  LagFeatures features;
  double target = 0.0;
};

/// Squared-error gradient boosting with exact greedy splits.
GbtEnsemble train_gbt(const std::vector<ForecastSample>& dataset, const GbtParams& params = {});

/// Mean squared training error; used to monitor per-round loss.
double training_mse(const GbtEnsemble& model, const std::vector<ForecastSample>& dataset);

double predict_next15(const GbtEnsemble& model, const LagFeatures& f);

struct ForecastError {
  double mae = 0.0;
  double rmse = 0.0;
};

ForecastError evaluate(const GbtEnsemble& model, const std::vector<ForecastSample>& holdout);
ForecastError evaluate_persistence(const std::vector<ForecastSample>& holdout);
ForecastError error_stats(std::span<const double> predictions, std::span<const double> targets);

/// Expected orders in the next 15 minutes under the generator itself.
double oracle_predictor(const ScenarioConfig& config, GridId grid, int shift_minute);

/// Samples for `grid`: targets are 15-minute windows starting every `stride`
/// minutes inside the hours [first_hour, last_hour], one group per shift-day.
std::vector<ForecastSample> make_forecast_dataset(const std::vector<TransactionRecord>& history,
                                                  GridId grid, int first_hour, int last_hour,
                                                  int stride = 5);

// Source of 15-minute demand predictions consumed by the simulator.
class DemandPredictor {
 public:
  virtual ~DemandPredictor() = default;
  virtual double predict(GridId grid, const LagFeatures& f, int shift_minute) const = 0;
};

class OraclePredictor final : public DemandPredictor {
 public:
  explicit OraclePredictor(const ScenarioConfig& config) : config_(config) {}
  double predict(GridId grid, const LagFeatures&, int shift_minute) const override {
    return oracle_predictor(config_, grid, shift_minute);
  }

 private:
  const ScenarioConfig& config_;
};

/// One ensemble per restaurant grid.
class GbtForecaster final : public DemandPredictor {
 public:
  GbtForecaster() = default;
  explicit GbtForecaster(std::map<GridId, GbtEnsemble> models) : models_(std::move(models)) {}

  double predict(GridId grid, const LagFeatures& f, int shift_minute) const override;
  const std::map<GridId, GbtEnsemble>& models() const { return models_; }

  void save(const std::string& path) const;
  static GbtForecaster load(const std::string& path);

 private:
  std::map<GridId, GbtEnsemble> models_;
};

struct ForecasterReport {
  std::map<GridId, ForecastError> model_error;
  std::map<GridId, ForecastError> persistence_error;
  double mean_mae = 0.0;
  double mean_rmse = 0.0;
  double persistence_mean_mae = 0.0;
  double persistence_mean_rmse = 0.0;
};

/// Synthesizes `num_weeks` of history, trains per-grid models on the first
/// `train_fraction` of shift-days and scores the rest.
std::pair<GbtForecaster, ForecasterReport> fit_forecaster(const ScenarioConfig& config,
                                                          int num_weeks, std::uint64_t seed,
                                                          const GbtParams& params = {},
                                                          double train_fraction = 0.8);

void to_json(nlohmann::json& j, const GbtEnsemble& m);
void from_json(const nlohmann::json& j, GbtEnsemble& m);

}  // namespace mealtwin
