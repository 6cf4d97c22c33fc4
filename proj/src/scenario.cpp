#include "mealtwin/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mealtwin/errors.hpp"

namespace mealtwin {

double ScenarioConfig::rate(GridId grid, int hour) const {
  auto it = hourly_rates.find({grid, hour});
  if (it == hourly_rates.end()) {
    throw ConfigError("no arrival rate for grid " + std::to_string(grid) + " at hour " +
                      std::to_string(hour));
  }
  return it->second;
}

void ScenarioConfig::validate() const {
  if (region.size() == 0) throw ConfigError("scenario region is empty");
  if (fleet_size < 1) throw ConfigError("fleet_size must be >= 1");
  if (shift_minutes < 1) throw ConfigError("shift_minutes must be >= 1");
  if (max_delivery_tasks < 1) throw ConfigError("max_delivery_tasks must be >= 1");
  if (prep_var < 0 || prep_noise_var < 0) throw ConfigError("prep variances must be >= 0");
  for (const auto& [key, lambda] : hourly_rates) {
    if (!region.contains(key.first)) {
      throw ConfigError("rate references unknown grid " + std::to_string(key.first));
    }
    if (!region.is_restaurant(key.first)) {
      throw ConfigError("rate given for household-only grid " + std::to_string(key.first));
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw ConfigError("arrival rates must be finite and >= 0");
    }
  }
  const int last_hour = hour_of(shift_minutes - 1);
  for (GridId g : region.restaurant_grids()) {
    for (int h = shift_start_hour; h <= last_hour; ++h) {
      if (!has_rate(g, h)) {
        throw ConfigError("missing rate for restaurant grid " + std::to_string(g) + " hour " +
                          std::to_string(h));
      }
    }
    auto it = od_probs.find(g);
    if (it == od_probs.end()) {
      throw ConfigError("missing od_probs row for restaurant grid " + std::to_string(g));
    }
  }
  for (const auto& [g, probs] : od_probs) {
    if (probs.size() != region.size()) {
      throw ConfigError("od_probs row for grid " + std::to_string(g) + " has wrong length");
    }
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw ConfigError("od probabilities must be >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("od_probs row for grid " + std::to_string(g) + " does not sum to 1");
    }
  }
}

ScenarioConfig default_scenario(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.region = ServiceRegion::default_5x5();
  cfg.seed = seed;

  // 6 full-weight grids + 3 half-weight grids share 63 orders/hour.
  const std::set<GridId> low_demand{7, 13, 17};
  const double full_rate = 63.0 / 7.5;
  const std::map<int, double> hour_factor{{18, 0.8}, {19, 1.1}, {20, 0.9}};
  const auto n = cfg.region.size();
  for (GridId g : cfg.region.restaurant_grids()) {
    const double base = low_demand.count(g) ? full_rate / 2.0 : full_rate;
    for (const auto& [h, f] : hour_factor) cfg.hourly_rates[{g, h}] = base * f;
    cfg.od_probs[g] = std::vector<double>(n, 1.0 / static_cast<double>(n));
  }
  return cfg;
}

const char* to_string(OrderStatus s) {
  switch (s) {
    case OrderStatus::pending: return "pending";
    case OrderStatus::assigned: return "assigned";
    case OrderStatus::picked_up: return "picked_up";
    case OrderStatus::delivered: return "delivered";
    case OrderStatus::overdue: return "overdue";
  }
  return "?";
}

PrepSample sample_prep(const ScenarioConfig& config, Rng& rng) {
  std::normal_distribution<double> est(config.prep_mean_min, std::sqrt(config.prep_var));
  std::normal_distribution<double> noise(0.0, std::sqrt(config.prep_noise_var));
  PrepSample s;
  s.estimated = std::max(est(rng), 0.0);
  s.actual = std::max(s.estimated + noise(rng), 0.0);
  return s;
}

namespace {

int poisson_count(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<int> dist(mean);
  return dist(rng);
}

GridId draw_household(const ScenarioConfig& config, GridId restaurant, Rng& rng) {
  const auto& probs = config.od_probs.at(restaurant);
  std::discrete_distribution<int> dist(probs.begin(), probs.end());
  return dist(rng);
}

}  // namespace

std::vector<std::pair<GridId, GridId>> sample_arrivals(const ScenarioConfig& config, int hour,
                                                       Rng& rng) {
  std::vector<std::pair<GridId, GridId>> out;
  for (GridId g : config.region.restaurant_grids()) {
    const int count = poisson_count(config.rate(g, hour) / 60.0, rng);
    for (int k = 0; k < count; ++k) out.emplace_back(g, draw_household(config, g, rng));
  }
  return out;
}

std::vector<Order> sample_orders(const ScenarioConfig& config, int minute, Rng& rng,
                                 int& next_order_id) {
  const int hour = config.hour_of(minute);
  std::vector<Order> out;
  for (GridId g : config.region.restaurant_grids()) {
    const int count = poisson_count(config.rate(g, hour) / 60.0, rng);
    for (int k = 0; k < count; ++k) {
      Order o;
      o.id = next_order_id++;
      o.placed_at = minute;
      o.restaurant = g;
      o.household = draw_household(config, g, rng);
      const auto prep = sample_prep(config, rng);
      o.est_prep = prep.estimated;
      o.actual_prep = prep.actual;
      out.push_back(o);
    }
  }
  return out;
}

// --- timestamps ------------------------------------------------------------

Timestamp Timestamp::from_civil(int year, unsigned month, unsigned day, int hour, int minute) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                           std::chrono::day{day}};
  if (!ymd.ok()) throw DataError("invalid calendar date");
  if (hour < 0 || hour > 23 || minute < 0 || minute > 59) throw DataError("invalid time of day");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return Timestamp{static_cast<std::int64_t>(days) * 1440 + hour * 60 + minute};
}

Timestamp Timestamp::parse(const std::string& iso) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  char tail = 0;
  const int n = std::sscanf(iso.c_str(), "%4d-%2d-%2dT%2d:%2d%c", &y, &mo, &d, &h, &mi, &tail);
  if (n != 5 || iso.size() != 16) throw DataError("bad timestamp '" + iso + "'");
  return from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h, mi);
}

std::int64_t Timestamp::day_index() const {
  return epoch_minutes >= 0 ? epoch_minutes / 1440 : -((-epoch_minutes + 1439) / 1440);
}

int Timestamp::minute_of_day() const {
  return static_cast<int>(epoch_minutes - day_index() * 1440);
}

int Timestamp::hour() const { return minute_of_day() / 60; }

int Timestamp::day_of_week() const {
  // 1970-01-01 was a Thursday (3 with Monday = 0).
  const auto d = day_index();
  return static_cast<int>(((d % 7) + 7 + 3) % 7);
}

std::string Timestamp::iso() const {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day_index()}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hour(),
                minute_of_day() % 60);
  return buf;
}

// --- rate estimation and history -------------------------------------------

RateEstimate estimate_rates(const std::vector<TransactionRecord>& history,
                            const ServiceRegion& region) {
  if (history.empty()) throw DataError("transaction history is empty");
  std::set<std::int64_t> days;
  std::set<int> hours;
  std::map<std::pair<GridId, int>, double> counts;
  std::map<GridId, std::vector<double>> od_counts;
  for (const auto& rec : history) {
    if (!region.contains(rec.restaurant) || !region.contains(rec.household)) {
      throw DataError("transaction references a grid outside the region");
    }
    if (!region.is_restaurant(rec.restaurant)) {
      throw DataError("transaction origin " + std::to_string(rec.restaurant) +
                      " is not a restaurant grid");
    }
    days.insert(rec.timestamp.day_index());
    hours.insert(rec.timestamp.hour());
    counts[{rec.restaurant, rec.timestamp.hour()}] += 1.0;
    auto& row = od_counts[rec.restaurant];
    if (row.empty()) row.assign(region.size(), 0.0);
    row[static_cast<std::size_t>(rec.household)] += 1.0;
  }

  RateEstimate est;
  est.shift_days = static_cast<int>(days.size());
  for (GridId g : region.restaurant_grids()) {
    for (int h : hours) {
      auto it = counts.find({g, h});
      est.hourly_rates[{g, h}] = it == counts.end() ? 0.0 : it->second / est.shift_days;
    }
    auto it = od_counts.find(g);
    if (it == od_counts.end()) {
      est.od_probs[g] = std::vector<double>(region.size(), 1.0 / static_cast<double>(region.size()));
      est.uniform_fallback.push_back(g);
      continue;
    }
    const double total = std::accumulate(it->second.begin(), it->second.end(), 0.0);
    std::vector<double> probs = it->second;
    for (double& p : probs) p /= total;
    est.od_probs[g] = std::move(probs);
  }
  return est;
}

std::vector<TransactionRecord> synth_history(const ScenarioConfig& config, int num_weeks, Rng& rng) {
  if (num_weeks < 1) throw ConfigError("num_weeks must be >= 1");
  std::set<int> hours;
  for (const auto& [key, lambda] : config.hourly_rates) hours.insert(key.second);

  // 2022-01-03 is a Monday.
  const auto monday = Timestamp::from_civil(2022, 1, 3, 0, 0);
  std::vector<TransactionRecord> out;
  for (int w = 0; w < num_weeks; ++w) {
    const std::int64_t day_start =
        monday.epoch_minutes + (static_cast<std::int64_t>(w) * 7 + config.day_of_week) * 1440;
    for (int h : hours) {
      for (int m = 0; m < 60; ++m) {
        for (const auto& [rest, house] : sample_arrivals(config, h, rng)) {
          out.push_back({Timestamp{day_start + h * 60 + m}, rest, house});
        }
      }
    }
  }
  return out;
}

void write_transactions_csv(std::ostream& out, const std::vector<TransactionRecord>& records) {
  out << "timestamp,restaurant_grid,household_grid\n";
  for (const auto& r : records) {
    out << r.timestamp.iso() << ',' << r.restaurant << ',' << r.household << '\n';
  }
}

std::vector<TransactionRecord> read_transactions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("transaction CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp,restaurant_grid,household_grid") {
    throw DataError("unexpected transaction CSV header '" + line + "'");
  }
  std::vector<TransactionRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string ts, rest, house;
    if (!std::getline(ss, ts, ',') || !std::getline(ss, rest, ',') || !std::getline(ss, house)) {
      throw DataError("malformed transaction row at line " + std::to_string(lineno));
    }
    try {
      out.push_back({Timestamp::parse(ts), std::stoi(rest), std::stoi(house)});
    } catch (const std::logic_error&) {
      throw DataError("malformed transaction row at line " + std::to_string(lineno));
    }
  }
  return out;
}

// --- JSON ------------------------------------------------------------------

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  nlohmann::json grids = nlohmann::json::array();
  for (const auto& cell : c.region.cells()) {
    grids.push_back({{"id", cell.id}, {"q", cell.coord.q}, {"r", cell.coord.r},
                     {"is_restaurant", cell.is_restaurant}});
  }
  nlohmann::json rates = nlohmann::json::array();
  for (const auto& [key, lambda] : c.hourly_rates) {
    rates.push_back({{"grid", key.first}, {"hour", key.second}, {"rate", lambda}});
  }
  nlohmann::json od = nlohmann::json::object();
  for (const auto& [g, probs] : c.od_probs) od[std::to_string(g)] = probs;
  j = {{"schema", kScenarioSchema},
       {"layout", c.region.layout_name()},
       {"grids", grids},
       {"hourly_rates", rates},
       {"od_probs", od},
       {"fleet_size", c.fleet_size},
       {"shift_start_hour", c.shift_start_hour},
       {"shift_minutes", c.shift_minutes},
       {"day_of_week", c.day_of_week},
       {"prep_mean_min", c.prep_mean_min},
       {"prep_var", c.prep_var},
       {"prep_noise_var", c.prep_noise_var},
       {"overdue_limit_min", c.overdue_limit_min},
       {"idle_threshold_min", c.idle_threshold_min},
       {"max_delivery_tasks", c.max_delivery_tasks},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  try {
    if (j.at("schema").get<std::string>() != kScenarioSchema) {
      throw ConfigError("unsupported scenario schema '" + j.at("schema").get<std::string>() + "'");
    }
    std::vector<GridCell> cells;
    for (const auto& g : j.at("grids")) {
      cells.push_back({g.at("id").get<int>(), {g.at("q").get<int>(), g.at("r").get<int>()},
                       g.at("is_restaurant").get<bool>()});
    }
    std::sort(cells.begin(), cells.end(),
              [](const GridCell& a, const GridCell& b) { return a.id < b.id; });
    c.region = ServiceRegion(std::move(cells), j.value("layout", std::string("custom")));
    c.hourly_rates.clear();
    for (const auto& r : j.at("hourly_rates")) {
      c.hourly_rates[{r.at("grid").get<int>(), r.at("hour").get<int>()}] = r.at("rate").get<double>();
    }
    c.od_probs.clear();
    for (const auto& [key, row] : j.at("od_probs").items()) {
      c.od_probs[std::stoi(key)] = row.get<std::vector<double>>();
    }
    c.fleet_size = j.at("fleet_size").get<int>();
    c.shift_start_hour = j.at("shift_start_hour").get<int>();
    c.shift_minutes = j.at("shift_minutes").get<int>();
    c.day_of_week = j.value("day_of_week", 5);
    c.prep_mean_min = j.at("prep_mean_min").get<double>();
    c.prep_var = j.at("prep_var").get<double>();
    c.prep_noise_var = j.at("prep_noise_var").get<double>();
    c.overdue_limit_min = j.at("overdue_limit_min").get<double>();
    c.idle_threshold_min = j.at("idle_threshold_min").get<double>();
    c.max_delivery_tasks = j.at("max_delivery_tasks").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scenario document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("malformed scenario document: ") + e.what());
  }
  c.validate();
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("scenario file is not valid JSON: " + std::string(e.what()));
  }
  return j.get<ScenarioConfig>();
}

void save_scenario(const std::string& path, const ScenarioConfig& config) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write scenario file " + path);
  out << nlohmann::json(config).dump(2) << '\n';
}

}  // namespace mealtwin
