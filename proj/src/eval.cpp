#include "mealtwin/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mealtwin/errors.hpp"

namespace mealtwin {

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

namespace {

double sum_sq_dev(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

}  // namespace

double pstdev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt(sum_sq_dev(v) / static_cast<double>(v.size()));
}

double stdev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt(sum_sq_dev(v) / static_cast<double>(v.size() - 1));
}

std::map<std::string, std::string> parse_detail(const std::string& detail) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < detail.size()) {
    auto end = detail.find(';', pos);
    if (end == std::string::npos) end = detail.size();
    const auto item = detail.substr(pos, end - pos);
    const auto eq = item.find('=');
    if (eq != std::string::npos) out[item.substr(0, eq)] = item.substr(eq + 1);
    pos = end + 1;
  }
  return out;
}

namespace {

double to_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError("bad number '" + s + "' in event log");
  }
  return v;
}

int to_int(const std::string& s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError("bad integer '" + s + "' in event log");
  }
  return v;
}

const std::string& field(const std::map<std::string, std::string>& d, const char* key,
                         const Event& e) {
  auto it = d.find(key);
  if (it == d.end()) {
    throw DataError("event '" + e.event + "' of " + e.entity + " lacks field '" + key + "'");
  }
  return it->second;
}

int entity_id(const std::string& entity, std::string_view prefix) {
  if (entity.rfind(prefix, 0) != 0) return -1;
  return to_int(entity.substr(prefix.size()));
}

std::vector<int> parse_counts(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(to_int(tok));
  return out;
}

}  // namespace

RunMetrics compute_metrics(const EventLog& log, int fleet_size) {
  if (fleet_size < 1) throw std::invalid_argument("compute_metrics: fleet size must be positive");
  RunMetrics m;
  const auto n = static_cast<std::size_t>(fleet_size);
  m.delivery_minutes.assign(n, 0.0);
  m.idle_minutes.assign(n, 0.0);
  m.reallocation_minutes.assign(n, 0.0);
  m.orders_served.assign(n, 0.0);
  m.distance_travelled.assign(n, 0.0);

  std::vector<std::string> status(n, "idle");
  std::vector<double> since(n, 0.0);
  std::map<int, double> arrival_gap;
  std::set<int> delivered;
  double shift_end = -1.0;

  auto courier_index = [&](const Event& e) {
    const int id = entity_id(e.entity, "courier:");
    if (id < 0 || id >= fleet_size) throw DataError("unknown courier entity " + e.entity);
    return static_cast<std::size_t>(id);
  };
  auto accrue = [&](std::size_t c, double t) {
    const double dt = std::max(0.0, t - since[c]);
    if (status[c] == "idle") m.idle_minutes[c] += dt;
    else if (status[c] == "reallocating") m.reallocation_minutes[c] += dt;
    else m.delivery_minutes[c] += dt;
    since[c] = t;
  };

  for (const auto& e : log.events()) {
    if (e.entity == "network") {
      if (e.event == "snapshot") {
        const auto d = parse_detail(e.detail);
        const auto idle = parse_counts(field(d, "idle", e));
        const auto pending = parse_counts(field(d, "pending", e));
        if (idle.size() != pending.size()) throw DataError("snapshot lists differ in length");
        double neg = 0.0, pos = 0.0;
        for (std::size_t g = 0; g < idle.size(); ++g) {
          const int gap = idle[g] - pending[g];
          neg += std::min(gap, 0);
          pos += std::max(gap, 0);
        }
        m.nsd += neg;
        m.psd += pos;
        ++m.snapshots;
      } else if (e.event == "end") {
        shift_end = e.time;
      }
      continue;
    }
    if (e.entity.rfind("order:", 0) == 0) {
      const int oid = entity_id(e.entity, "order:");
      if (e.event == "placed") {
        ++m.sampled;
      } else if (e.event == "assigned") {
        const auto d = parse_detail(e.detail);
        m.pickup_distances.push_back(to_int(field(d, "pickup_distance", e)));
        const int c = to_int(field(d, "courier", e));
        if (c < 0 || c >= fleet_size) throw DataError("assignment to unknown courier");
        m.orders_served[static_cast<std::size_t>(c)] += 1.0;
      } else if (e.event == "courier_arrival") {
        const auto d = parse_detail(e.detail);
        arrival_gap[oid] = e.time - to_double(field(d, "ready", e));
      } else if (e.event == "delivered") {
        delivered.insert(oid);
      } else if (e.event == "overdue") {
        ++m.overdue;
      }
      continue;
    }
    if (e.entity.rfind("courier:", 0) == 0) {
      const auto c = courier_index(e);
      if (e.event == "status") {
        const auto d = parse_detail(e.detail);
        if (field(d, "from", e) != status[c]) {
          throw DataError("status chain broken for " + e.entity + " at minute " + format_number(e.time));
        }
        accrue(c, e.time);
        status[c] = field(d, "to", e);
      } else if (e.event == "move") {
        const auto d = parse_detail(e.detail);
        m.distance_travelled[c] += to_int(field(d, "units", e));
      }
      continue;
    }
    throw DataError("unknown entity '" + e.entity + "'");
  }
  if (shift_end < 0.0) throw DataError("event log has no end marker");
  for (std::size_t c = 0; c < n; ++c) accrue(c, shift_end);

  for (int oid : delivered) {
    auto it = arrival_gap.find(oid);
    if (it == arrival_gap.end()) throw DataError("delivered order without a courier arrival");
    m.time_gaps.push_back(it->second);
  }
  m.delivered = static_cast<int>(delivered.size());
  m.overdue_rate = m.sampled > 0 ? static_cast<double>(m.overdue) / m.sampled : 0.0;
  if (m.snapshots > 0) {
    m.nsd /= m.snapshots;
    m.psd /= m.snapshots;
  }
  return m;
}

OutlierResult exclude_outliers(std::span<const double> run_gap_means) {
  OutlierResult out;
  const std::size_t n = run_gap_means.size();
  if (n < 20) {
    out.kept.resize(n);
    std::iota(out.kept.begin(), out.kept.end(), 0);
    return out;
  }
  std::vector<double> sorted(run_gap_means.begin(), run_gap_means.end());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  out.cutoff = sorted[rank - 1];
  out.applied = true;
  for (std::size_t i = 0; i < n; ++i) {
    (run_gap_means[i] > out.cutoff ? out.excluded : out.kept).push_back(i);
  }
  return out;
}

MannWhitney mann_whitney_u(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2 || y.size() < 2) throw std::invalid_argument("mann_whitney_u: samples need >= 2 values");
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::vector<std::pair<double, int>> pooled;
  for (double v : x) pooled.emplace_back(v, 0);
  for (double v : y) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end());

  double rank_x = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second == 0) rank_x += midrank;
    }
    tie_term += t * t * t - t;
    i = j;
  }
  MannWhitney r;
  r.u = rank_x - nx * (nx + 1.0) / 2.0;
  const double nn = nx + ny;
  const double var = nx * ny / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0.0) return r;
  r.z = (std::abs(r.u - nx * ny / 2.0) - 0.5) / std::sqrt(var);
  if (r.z <= 0.0) {
    r.z = 0.0;
    return r;
  }
  r.p = std::erfc(r.z / std::sqrt(2.0));
  return r;
}

const std::vector<MetricDef>& metric_defs() {
  static const std::vector<MetricDef> defs = {
      {"time_gap", "time_gap", [](const RunMetrics& m) { return m.gap_mean(); }},
      {"time_gap_std", "time_gap", [](const RunMetrics& m) { return m.gap_std(); }},
      {"pickup_distance", "pickup", [](const RunMetrics& m) { return m.pickup_mean(); }},
      {"pickup_distance_std", "pickup", [](const RunMetrics& m) { return m.pickup_std(); }},
      {"overdue_rate", "overdue", [](const RunMetrics& m) { return m.overdue_rate; }},
      {"nsd", "balance", [](const RunMetrics& m) { return m.nsd; }},
      {"psd", "balance", [](const RunMetrics& m) { return m.psd; }},
      {"delivery_minutes", "workload", [](const RunMetrics& m) { return mean(m.delivery_minutes); }},
      {"delivery_minutes_std", "workload", [](const RunMetrics& m) { return pstdev(m.delivery_minutes); }},
      {"idle_minutes", "workload", [](const RunMetrics& m) { return mean(m.idle_minutes); }},
      {"idle_minutes_std", "workload", [](const RunMetrics& m) { return pstdev(m.idle_minutes); }},
      {"reallocation_minutes", "workload", [](const RunMetrics& m) { return mean(m.reallocation_minutes); }},
      {"orders_served", "income", [](const RunMetrics& m) { return mean(m.orders_served); }},
      {"orders_served_std", "income", [](const RunMetrics& m) { return pstdev(m.orders_served); }},
      {"travel_distance", "travel", [](const RunMetrics& m) { return mean(m.distance_travelled); }},
      {"travel_distance_std", "travel", [](const RunMetrics& m) { return pstdev(m.distance_travelled); }},
  };
  return defs;
}

ComparisonReport compare_frameworks(
    const std::vector<std::pair<std::string, std::vector<RunMetrics>>>& runs) {
  ComparisonReport rep;
  std::map<std::string, std::map<std::string, std::vector<double>>> kept_values;

  for (const auto& [name, list] : runs) {
    VariantSummary s;
    s.variant = name;
    s.runs = list.size();
    if (list.empty()) {
      rep.missing.push_back(name);
      rep.variants.push_back(std::move(s));
      continue;
    }
    std::vector<double> gap_means;
    for (const auto& m : list) gap_means.push_back(m.gap_mean());
    const auto outl = exclude_outliers(gap_means);
    s.excluded = outl.excluded;

    std::vector<double> gaps, pickups, delivery, idle, served, dist;
    for (std::size_t i : outl.kept) {
      const auto& m = list[i];
      gaps.insert(gaps.end(), m.time_gaps.begin(), m.time_gaps.end());
      pickups.insert(pickups.end(), m.pickup_distances.begin(), m.pickup_distances.end());
      delivery.insert(delivery.end(), m.delivery_minutes.begin(), m.delivery_minutes.end());
      idle.insert(idle.end(), m.idle_minutes.begin(), m.idle_minutes.end());
      served.insert(served.end(), m.orders_served.begin(), m.orders_served.end());
      dist.insert(dist.end(), m.distance_travelled.begin(), m.distance_travelled.end());
    }
    for (const auto& def : metric_defs()) {
      std::vector<double> vals;
      for (std::size_t i : outl.kept) vals.push_back(def.extract(list[i]));
      s.avg[def.name] = mean(vals);
      s.std[def.name] = stdev(vals);
      kept_values[name][def.name] = std::move(vals);
    }
    auto pool = [&](const std::string& key, const std::vector<double>& v) {
      s.pooled[key] = mean(v);
      s.pooled[key + "_std"] = pstdev(v);
    };
    pool("time_gap", gaps);
    pool("pickup_distance", pickups);
    pool("delivery_minutes", delivery);
    pool("idle_minutes", idle);
    pool("orders_served", served);
    pool("travel_distance", dist);
    rep.variants.push_back(std::move(s));
  }

  for (std::size_t i = 0; i < rep.variants.size(); ++i) {
    for (std::size_t j = i + 1; j < rep.variants.size(); ++j) {
      const auto& a = rep.variants[i].variant;
      const auto& b = rep.variants[j].variant;
      if (!kept_values.count(a) || !kept_values.count(b)) continue;
      for (const auto& def : metric_defs()) {
        const auto& x = kept_values[a][def.name];
        const auto& y = kept_values[b][def.name];
        if (x.size() < 2 || y.size() < 2) continue;
        rep.tests.push_back({def.name, a, b, mann_whitney_u(x, y)});
      }
    }
  }
  return rep;
}

void to_json(nlohmann::json& j, const ComparisonReport& r) {
  auto variants = nlohmann::json::array();
  for (const auto& v : r.variants) {
    variants.push_back({{"variant", v.variant},
                        {"runs", v.runs},
                        {"excluded", v.excluded},
                        {"avg", v.avg},
                        {"std", v.std},
                        {"pooled", v.pooled}});
  }
  auto tests = nlohmann::json::array();
  for (const auto& t : r.tests) {
    tests.push_back({{"metric", t.metric}, {"a", t.a}, {"b", t.b}, {"u", t.test.u}, {"z", t.test.z},
                     {"p", t.test.p}});
  }
  j = {{"schema", "mealtwin.report/1"}, {"variants", variants}, {"tests", tests}, {"missing", r.missing}};
}

void from_json(const nlohmann::json& j, ComparisonReport& r) {
  try {
    if (j.at("schema").get<std::string>() != "mealtwin.report/1") {
      throw DataError("unsupported report schema");
    }
    r = {};
    for (const auto& v : j.at("variants")) {
      VariantSummary s;
      s.variant = v.at("variant").get<std::string>();
      s.runs = v.at("runs").get<std::size_t>();
      s.excluded = v.at("excluded").get<std::vector<std::size_t>>();
      s.avg = v.at("avg").get<std::map<std::string, double>>();
      s.std = v.at("std").get<std::map<std::string, double>>();
      s.pooled = v.at("pooled").get<std::map<std::string, double>>();
      r.variants.push_back(std::move(s));
    }
    for (const auto& t : j.at("tests")) {
      PairTest p;
      p.metric = t.at("metric").get<std::string>();
      p.a = t.at("a").get<std::string>();
      p.b = t.at("b").get<std::string>();
      p.test.u = t.at("u").get<double>();
      p.test.z = t.at("z").get<double>();
      p.test.p = t.at("p").get<double>();
      r.tests.push_back(std::move(p));
    }
    r.missing = j.value("missing", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

void write_report(const std::string& dir, const ComparisonReport& r) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> families;
  for (const auto& def : metric_defs()) {
    if (std::find(families.begin(), families.end(), def.family) == families.end()) {
      families.push_back(def.family);
    }
  }
  for (const auto& fam : families) {
    std::ofstream out(fs::path(dir) / (fam + ".csv"));
    if (!out) throw DataError("cannot write report into " + dir);
    out << "variant,runs,excluded";
    for (const auto& def : metric_defs()) {
      if (def.family == fam) out << ',' << def.name << "_avg," << def.name << "_std";
    }
    out << '\n';
    for (const auto& v : r.variants) {
      out << v.variant << ',' << v.runs << ',' << v.excluded.size();
      for (const auto& def : metric_defs()) {
        if (def.family != fam) continue;
        auto a = v.avg.find(def.name);
        auto s = v.std.find(def.name);
        out << ',' << (a == v.avg.end() ? "" : format_number(a->second)) << ','
            << (s == v.std.end() ? "" : format_number(s->second));
      }
      out << '\n';
    }
  }
  std::ofstream pv(fs::path(dir) / "pvalues.csv");
  pv << "metric,variant_a,variant_b,u,p\n";
  for (const auto& t : r.tests) {
    pv << t.metric << ',' << t.a << ',' << t.b << ',' << format_number(t.test.u) << ','
       << format_number(t.test.p) << '\n';
  }
  std::ofstream js(fs::path(dir) / "summary.json");
  js << nlohmann::json(r).dump(1) << '\n';
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string render_markdown(const ComparisonReport& r) {
  std::ostringstream out;
  std::vector<std::string> families;
  for (const auto& def : metric_defs()) {
    if (std::find(families.begin(), families.end(), def.family) == families.end()) {
      families.push_back(def.family);
    }
  }
  for (const auto& fam : families) {
    out << "### " << fam << "\n\n| metric |";
    for (const auto& v : r.variants) out << ' ' << v.variant << " avg | " << v.variant << " std |";
    out << "\n|---|";
    for (std::size_t i = 0; i < r.variants.size(); ++i) out << "---:|---:|";
    out << '\n';
    for (const auto& def : metric_defs()) {
      if (def.family != fam) continue;
      out << "| " << def.name << " |";
      for (const auto& v : r.variants) {
        auto a = v.avg.find(def.name);
        auto s = v.std.find(def.name);
        out << ' ' << (a == v.avg.end() ? "-" : fixed(a->second, 3)) << " | "
            << (s == v.std.end() ? "-" : fixed(s->second, 3)) << " |";
      }
      out << '\n';
    }
    out << '\n';
  }
  if (!r.missing.empty()) {
    out << "Variants without runs:";
    for (const auto& m : r.missing) out << ' ' << m;
    out << "\n";
  }
  return out.str();
}

}  // namespace mealtwin
