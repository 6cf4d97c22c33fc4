#include "mealtwin/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "mealtwin/errors.hpp"

namespace mealtwin {

void ArrivalCounter::add(GridId grid, std::int64_t minute) {
  auto& v = arrivals_[grid];
  v.insert(std::upper_bound(v.begin(), v.end(), minute), minute);
}

int ArrivalCounter::count(GridId grid, std::int64_t start, std::int64_t end) const {
  auto it = arrivals_.find(grid);
  if (it == arrivals_.end() || end <= start) return 0;
  const auto& v = it->second;
  return static_cast<int>(std::lower_bound(v.begin(), v.end(), end) -
                          std::lower_bound(v.begin(), v.end(), start));
}

LagFeatures build_features(const ArrivalCounter& history, GridId grid, std::int64_t t,
                           int day_of_week, int hour_of_day) {
  LagFeatures f;
  f.day_of_week = day_of_week;
  f.hour_of_day = hour_of_day;
  for (int k = 0; k < 4; ++k) {
    const std::int64_t end = t - static_cast<std::int64_t>(k) * kForecastWindow;
    const std::int64_t start = end - kForecastWindow;
    if (start < history.coverage_start()) {
      f.lags[static_cast<std::size_t>(k)] = 0.0;
      f.insufficient_history = true;
    } else {
      f.lags[static_cast<std::size_t>(k)] = history.count(grid, start, end);
    }
  }
  return f;
}

LagFeatures build_features(const std::vector<TransactionRecord>& history, GridId grid,
                           Timestamp t) {
  ArrivalCounter counter(history.empty() ? t.epoch_minutes : history.front().timestamp.epoch_minutes);
  for (const auto& rec : history) {
    counter.set_coverage_start(std::min(counter.coverage_start(), rec.timestamp.epoch_minutes));
    counter.add(rec.restaurant, rec.timestamp.epoch_minutes);
  }
  if (history.empty()) counter.set_coverage_start(t.epoch_minutes - 60);
  return build_features(counter, grid, t.epoch_minutes, t.day_of_week(), t.hour());
}

// --- trees -----------------------------------------------------------------

double RegressionTree::predict(std::span<const double> x) const {
  if (nodes.empty()) return 0.0;
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

double GbtEnsemble::predict_raw(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return base_score + eta * sum;
}

namespace {

using FeatureRow = std::array<double, kNumLagFeatures>;

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<FeatureRow>& x, const std::vector<double>& residual,
              const GbtParams& params)
      : x_(x), residual_(residual), params_(params) {}

  RegressionTree build() {
    std::vector<std::size_t> all(x_.size());
    std::iota(all.begin(), all.end(), 0);
    tree_.nodes.clear();
    grow(all, 0);
    return std::move(tree_);
  }

 private:
  int grow(const std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0.0;
    for (auto i : idx) sum += residual_[i];
    const double n = static_cast<double>(idx.size());

    struct Split {
      double gain = 0.0;
      int feature = -1;
      double threshold = 0.0;
    } best;

    if (depth < params_.max_depth && idx.size() >= 2 * static_cast<std::size_t>(params_.min_leaf)) {
      const double parent_score = sum * sum / (n + params_.lambda);
      std::vector<std::size_t> order = idx;
      for (int f = 0; f < static_cast<int>(kNumLagFeatures); ++f) {
        const auto fu = static_cast<std::size_t>(f);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          return x_[a][fu] < x_[b][fu];
        });
        double left_sum = 0.0;
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
          left_sum += residual_[order[k]];
          const double lo = x_[order[k]][fu];
          const double hi = x_[order[k + 1]][fu];
          if (!(lo < hi)) continue;
          const double nl = static_cast<double>(k + 1);
          const double nr = n - nl;
          if (nl < params_.min_leaf || nr < params_.min_leaf) continue;
          const double right_sum = sum - left_sum;
          const double gain = left_sum * left_sum / (nl + params_.lambda) +
                              right_sum * right_sum / (nr + params_.lambda) - parent_score;
          // strict improvement keeps the lowest feature, then lowest threshold
          if (gain > best.gain + 1e-12) best = {gain, f, 0.5 * (lo + hi)};
        }
      }
    }

    if (best.feature < 0) {
      tree_.nodes[static_cast<std::size_t>(id)].value = sum / (n + params_.lambda);
      return id;
    }

    std::vector<std::size_t> left, right;
    for (auto i : idx) {
      (x_[i][static_cast<std::size_t>(best.feature)] < best.threshold ? left : right).push_back(i);
    }
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const std::vector<FeatureRow>& x_;
  const std::vector<double>& residual_;
  const GbtParams& params_;
  RegressionTree tree_;
};

}  // namespace

GbtEnsemble train_gbt(const std::vector<ForecastSample>& dataset, const GbtParams& params) {
  if (dataset.empty()) throw std::invalid_argument("train_gbt: dataset is empty");
  if (params.rounds < 0 || params.max_depth < 0 || params.min_leaf < 1 || params.lambda < 0 ||
      !(params.eta > 0)) {
    throw ConfigError("invalid boosting parameters");
  }
  std::vector<FeatureRow> x;
  std::vector<double> y;
  x.reserve(dataset.size());
  for (const auto& s : dataset) {
    x.push_back(s.features.as_vector());
    y.push_back(s.target);
  }

  GbtEnsemble model;
  model.params = params;
  model.eta = params.eta;
  model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

  std::vector<double> pred(y.size(), model.base_score);
  std::vector<double> residual(y.size());
  for (int round = 0; round < params.rounds; ++round) {
    for (std::size_t i = 0; i < y.size(); ++i) residual[i] = y[i] - pred[i];
    RegressionTree tree = TreeBuilder(x, residual, params).build();
    for (std::size_t i = 0; i < y.size(); ++i) pred[i] += params.eta * tree.predict(x[i]);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

double training_mse(const GbtEnsemble& model, const std::vector<ForecastSample>& dataset) {
  double sse = 0.0;
  for (const auto& s : dataset) {
    const auto v = s.features.as_vector();
    const double e = model.predict_raw(v) - s.target;
    sse += e * e;
  }
  return dataset.empty() ? 0.0 : sse / static_cast<double>(dataset.size());
}

double predict_next15(const GbtEnsemble& model, const LagFeatures& f) {
  const auto v = f.as_vector();
  return std::max(model.predict_raw(v), 0.0);
}

ForecastError error_stats(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size() || predictions.empty()) {
    throw std::invalid_argument("error_stats: empty or mismatched inputs");
  }
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - targets[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(predictions.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

ForecastError evaluate(const GbtEnsemble& model, const std::vector<ForecastSample>& holdout) {
  std::vector<double> p, t;
  for (const auto& s : holdout) {
    p.push_back(predict_next15(model, s.features));
    t.push_back(s.target);
  }
  return error_stats(p, t);
}

ForecastError evaluate_persistence(const std::vector<ForecastSample>& holdout) {
  std::vector<double> p, t;
  for (const auto& s : holdout) {
    p.push_back(s.features.lags[0]);
    t.push_back(s.target);
  }
  return error_stats(p, t);
}

double oracle_predictor(const ScenarioConfig& config, GridId grid, int shift_minute) {
  if (!config.region.is_restaurant(grid)) return 0.0;
  return config.rate(grid, config.hour_of(shift_minute)) * 0.25;
}

std::vector<ForecastSample> make_forecast_dataset(const std::vector<TransactionRecord>& history,
                                                  GridId grid, int first_hour, int last_hour,
                                                  int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::set<std::int64_t> days;
  int min_hour = 24;
  ArrivalCounter counter(0);
  for (const auto& rec : history) {
    days.insert(rec.timestamp.day_index());
    min_hour = std::min(min_hour, rec.timestamp.hour());
    counter.add(rec.restaurant, rec.timestamp.epoch_minutes);
  }
  std::vector<ForecastSample> out;
  const int first_t = std::max(first_hour * 60, (min_hour + 1) * 60);
  const int end_t = (last_hour + 1) * 60 - kForecastWindow;
  for (auto day : days) {
    const std::int64_t day_start = day * 1440;
    counter.set_coverage_start(day_start + min_hour * 60);
    const int dow = Timestamp{day_start}.day_of_week();
    for (int t = first_t; t <= end_t; t += stride) {
      const std::int64_t abs_t = day_start + t;
      ForecastSample s;
      s.features = build_features(counter, grid, abs_t, dow, t / 60);
      s.target = counter.count(grid, abs_t, abs_t + kForecastWindow);
      out.push_back(s);
    }
  }
  return out;
}

double GbtForecaster::predict(GridId grid, const LagFeatures& f, int) const {
  auto it = models_.find(grid);
  if (it == models_.end()) return 0.0;
  return predict_next15(it->second, f);
}

std::pair<GbtForecaster, ForecasterReport> fit_forecaster(const ScenarioConfig& config,
                                                          int num_weeks, std::uint64_t seed,
                                                          const GbtParams& params,
                                                          double train_fraction) {
  Rng rng(derive_seed(seed, {stream::kHistory}));
  const auto history = synth_history(config, num_weeks, rng);
  std::set<std::int64_t> day_set;
  for (const auto& r : history) day_set.insert(r.timestamp.day_index());
  const std::vector<std::int64_t> days(day_set.begin(), day_set.end());
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(days.size()))));
  const std::int64_t split_day = n_train < days.size() ? days[n_train] : days.back() + 1;

  std::vector<TransactionRecord> train, test;
  for (const auto& r : history) (r.timestamp.day_index() < split_day ? train : test).push_back(r);

  const int first_hour = config.shift_start_hour;
  const int last_hour = config.hour_of(config.shift_minutes - 1);
  std::map<GridId, GbtEnsemble> models;
  ForecasterReport report;
  int scored = 0;
  for (GridId g : config.region.restaurant_grids()) {
    auto train_set = make_forecast_dataset(train, g, first_hour, last_hour);
    if (train_set.empty()) {
      throw DataError("forecaster history too short for grid " + std::to_string(g));
    }
    models[g] = train_gbt(train_set, params);
    auto test_set = make_forecast_dataset(test, g, first_hour, last_hour);
    if (!test_set.empty()) {
      report.model_error[g] = evaluate(models[g], test_set);
      report.persistence_error[g] = evaluate_persistence(test_set);
      report.mean_mae += report.model_error[g].mae;
      report.mean_rmse += report.model_error[g].rmse;
      report.persistence_mean_mae += report.persistence_error[g].mae;
      report.persistence_mean_rmse += report.persistence_error[g].rmse;
      ++scored;
    }
  }
  if (scored > 0) {
    report.mean_mae /= scored;
    report.mean_rmse /= scored;
    report.persistence_mean_mae /= scored;
    report.persistence_mean_rmse /= scored;
  }
  return {GbtForecaster(std::move(models)), report};
}

// --- persistence -----------------------------------------------------------

void to_json(nlohmann::json& j, const GbtEnsemble& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"value", value}});
  }
  j = {{"base_score", m.base_score},
       {"eta", m.eta},
       {"params",
        {{"rounds", m.params.rounds},
         {"max_depth", m.params.max_depth},
         {"eta", m.params.eta},
         {"min_leaf", m.params.min_leaf},
         {"lambda", m.params.lambda}}},
       {"trees", trees}};
}

void from_json(const nlohmann::json& j, GbtEnsemble& m) {
  m.base_score = j.at("base_score").get<double>();
  m.eta = j.at("eta").get<double>();
  const auto& p = j.at("params");
  m.params = {p.at("rounds").get<int>(), p.at("max_depth").get<int>(), p.at("eta").get<double>(),
              p.at("min_leaf").get<int>(), p.at("lambda").get<double>()};
  m.trees.clear();
  for (const auto& t : j.at("trees")) {
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto value = t.at("value").get<std::vector<double>>();
    const auto n = feature.size();
    if (threshold.size() != n || left.size() != n || right.size() != n || value.size() != n) {
      throw DataError("tree node arrays have inconsistent lengths");
    }
    RegressionTree tree;
    for (std::size_t i = 0; i < n; ++i) {
      if (feature[i] >= static_cast<int>(kNumLagFeatures)) throw DataError("bad feature index");
      if (feature[i] >= 0 && (left[i] <= static_cast<int>(i) || right[i] <= static_cast<int>(i) ||
                              left[i] >= static_cast<int>(n) || right[i] >= static_cast<int>(n))) {
        throw DataError("bad child index in tree");
      }
      tree.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i]});
    }
    m.trees.push_back(std::move(tree));
  }
}

void GbtForecaster::save(const std::string& path) const {
  nlohmann::json grids = nlohmann::json::object();
  for (const auto& [g, m] : models_) grids[std::to_string(g)] = m;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write forecaster file " + path);
  out << nlohmann::json{{"schema", kForecasterSchema}, {"grids", grids}}.dump() << '\n';
}

GbtForecaster GbtForecaster::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open forecaster file " + path);
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("schema").get<std::string>() != kForecasterSchema) {
      throw DataError("unsupported forecaster schema");
    }
    std::map<GridId, GbtEnsemble> models;
    for (const auto& [key, m] : j.at("grids").items()) models[std::stoi(key)] = m.get<GbtEnsemble>();
    return GbtForecaster(std::move(models));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed forecaster file: ") + e.what());
  }
}

}  // namespace mealtwin
