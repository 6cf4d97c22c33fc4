#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mealtwin/dispatch.hpp"
#include "mealtwin/errors.hpp"
#include "mealtwin/eval.hpp"

using namespace mealtwin;

namespace {

std::string counts(std::initializer_list<int> v) {
  std::string s;
  for (int x : v) {
    if (!s.empty()) s += ' ';
    s += std::to_string(x);
  }
  return s;
}

// Two grids, one courier: one order delivered 2 minutes after it was ready.
EventLog tiny_log() {
  EventLog log;
  log.add(0, "network", "snapshot", "idle=" + counts({1, 0}) + ";pending=" + counts({0, 3}));
  log.add(0, "order:0", "placed", "restaurant=1;household=0");
  log.add(0, "order:0", "assigned", "courier=0;pickup_distance=1;eta_grid=0;eta=0;courier_gap=1");
  log.add(0, "courier:0", "status", "from=idle;to=to_pickup;grid=0");
  log.add(0, "courier:0", "move", "from=0;to=1;units=1");
  log.add(3, "order:0", "courier_arrival", "courier=0;ready=1");
  log.add(3, "courier:0", "status", "from=to_pickup;to=to_delivery;grid=1");
  log.add(3, "courier:0", "move", "from=1;to=0;units=1");
  log.add(6, "order:0", "delivered", "courier=0");
  log.add(6, "courier:0", "status", "from=to_delivery;to=idle;grid=0");
  log.add(1, "network", "snapshot", "idle=" + counts({0, 0}) + ";pending=" + counts({0, 0}));
  log.add(10, "network", "end");
  return log;
}

RunMetrics with_gaps(std::vector<double> gaps) {
  RunMetrics m;
  m.time_gaps = std::move(gaps);
  m.pickup_distances = {1, 2};
  m.delivery_minutes = {10, 20};
  m.idle_minutes = {5, 5};
  m.reallocation_minutes = {0, 0};
  m.orders_served = {1, 1};
  m.distance_travelled = {2, 4};
  m.sampled = 2;
  m.delivered = 2;
  return m;
}

}  // namespace

TEST(Stats, MeanAndStd) {
  const std::vector<double> v = {2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_DOUBLE_EQ(mean(v), 5.0);
  EXPECT_DOUBLE_EQ(pstdev(v), 2.0);
  EXPECT_DOUBLE_EQ(stdev(v), std::sqrt(32.0 / 7.0));
  EXPECT_EQ(pstdev(std::vector<double>{3.0}), 0.0);
  EXPECT_EQ(mean(std::vector<double>{}), 0.0);
}

TEST(ParseDetail, KeyValues) {
  const auto d = parse_detail("a=1;b=x y;c=");
  EXPECT_EQ(d.at("a"), "1");
  EXPECT_EQ(d.at("b"), "x y");
  EXPECT_EQ(d.at("c"), "");
  EXPECT_TRUE(parse_detail("").empty());
}

TEST(Metrics, TinyLog) {
  const auto m = compute_metrics(tiny_log(), 1);
  EXPECT_EQ(m.sampled, 1);
  EXPECT_EQ(m.delivered, 1);
  ASSERT_EQ(m.time_gaps.size(), 1u);
  EXPECT_EQ(m.time_gaps[0], 2.0);
  EXPECT_EQ(m.pickup_distances, std::vector<double>{1.0});
  EXPECT_EQ(m.snapshots, 2);
  EXPECT_DOUBLE_EQ(m.nsd, -3.0 / 2);
  EXPECT_DOUBLE_EQ(m.psd, 1.0 / 2);
  EXPECT_DOUBLE_EQ(m.delivery_minutes[0], 6.0);
  EXPECT_DOUBLE_EQ(m.idle_minutes[0], 4.0);
  EXPECT_DOUBLE_EQ(m.distance_travelled[0], 2.0);
  EXPECT_DOUBLE_EQ(m.orders_served[0], 1.0);
  EXPECT_EQ(m.overdue_rate, 0.0);
}

TEST(Metrics, NsdOverAShift) {
  // -3 in one of 120 snapshots averages to -0.025.
  EventLog log;
  for (int t = 0; t < 120; ++t) {
    log.add(t, "network", "snapshot",
            "idle=" + counts({0, 0}) + ";pending=" + (t == 5 ? counts({3, 0}) : counts({0, 0})));
  }
  log.add(120, "network", "end");
  const auto m = compute_metrics(log, 1);
  EXPECT_DOUBLE_EQ(m.nsd, -3.0 / 120);
  EXPECT_EQ(m.psd, 0.0);
}

TEST(Metrics, MalformedLogs) {
  EventLog no_end;
  no_end.add(0, "network", "snapshot", "idle=0;pending=0");
  EXPECT_THROW(compute_metrics(no_end, 1), DataError);

  EventLog broken = tiny_log();
  EventLog bad;
  for (const auto& e : broken.events()) {
    bad.add(e.time, e.entity, e.event, e.event == "status" && e.time == 3 ? "from=idle;to=to_delivery" : e.detail);
  }
  EXPECT_THROW(compute_metrics(bad, 1), DataError);

  EventLog stranger;
  stranger.add(0, "robot:1", "status", "");
  stranger.add(1, "network", "end");
  EXPECT_THROW(compute_metrics(stranger, 1), DataError);
  EXPECT_THROW(compute_metrics(tiny_log(), 0), std::invalid_argument);
}

class SimulatedShift : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(SimulatedShift, ReplayMatchesSimulatorState) {
  const auto sc = default_scenario();
  Simulator sim(sc, nullptr, Mode::strategic, {GetParam(), GetParam() + 100});
  NearestIdleDispatcher d;
  sim.run(d, nullptr);
  const auto m = compute_metrics(sim.log(), sc.fleet_size);
  const auto again = compute_metrics(sim.log(), sc.fleet_size);
  EXPECT_EQ(m.time_gaps, again.time_gaps);
  EXPECT_EQ(m.nsd, again.nsd);

  const auto c = sim.order_counts();
  EXPECT_EQ(m.sampled, c.sampled);
  EXPECT_EQ(m.delivered, c.delivered);
  EXPECT_EQ(m.overdue, c.overdue);
  for (const auto& cr : sim.couriers()) {
    const auto i = static_cast<std::size_t>(cr.id);
    EXPECT_NEAR(m.delivery_minutes[i], cr.delivery_minutes, 1e-9);
    EXPECT_NEAR(m.idle_minutes[i], cr.idle_minutes, 1e-9);
    EXPECT_NEAR(m.reallocation_minutes[i], cr.reallocation_minutes, 1e-9);
    EXPECT_EQ(m.distance_travelled[i], cr.distance_travelled);
    EXPECT_EQ(m.orders_served[i], cr.orders_served);
    EXPECT_NEAR(m.delivery_minutes[i] + m.idle_minutes[i] + m.reallocation_minutes[i],
                sc.shift_minutes, 1e-9);
  }
  for (const auto& o : sim.orders()) {
    if (o.delivered_time) {
      EXPECT_NE(std::find(m.time_gaps.begin(), m.time_gaps.end(), *o.courier_arrival - o.ready_time()),
                m.time_gaps.end());
    }
  }

  // NSD <= 0 <= PSD, and together they are the mean total gap.
  EXPECT_LE(m.nsd, 0.0);
  EXPECT_GE(m.psd, 0.0);
  double total = 0;
  int snaps = 0;
  for (const auto& e : sim.log().events()) {
    if (e.event != "snapshot") continue;
    const auto dd = parse_detail(e.detail);
    std::istringstream a(dd.at("idle")), b(dd.at("pending"));
    int x, y;
    while (a >> x && b >> y) total += x - y;
    ++snaps;
  }
  EXPECT_NEAR(m.nsd + m.psd, total / snaps, 1e-9);

  // Round trip through CSV does not change anything.
  std::stringstream io;
  sim.log().write_csv(io);
  const auto back = compute_metrics(EventLog::read_csv(io), sc.fleet_size);
  EXPECT_EQ(back.time_gaps, m.time_gaps);
  EXPECT_EQ(back.delivery_minutes, m.delivery_minutes);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SimulatedShift, ::testing::Values(1u, 2u, 3u));

TEST(Fairness, StdIgnoresCourierOrder) {
  const std::vector<double> a = {3, 1, 4, 1, 5, 9, 2, 6};
  std::vector<double> b = a;
  std::reverse(b.begin(), b.end());
  std::rotate(b.begin(), b.begin() + 3, b.end());
  EXPECT_DOUBLE_EQ(pstdev(a), pstdev(b));
  EXPECT_DOUBLE_EQ(stdev(a), stdev(b));
}

TEST(Outliers, IdenticalRunsKeepAll) {
  const std::vector<double> v(40, 2.5);
  const auto r = exclude_outliers(v);
  EXPECT_TRUE(r.applied);
  EXPECT_TRUE(r.excluded.empty());
  EXPECT_EQ(r.kept.size(), 40u);
}

TEST(Outliers, InflatedRunsAreDropped) {
  std::vector<double> v;
  for (int i = 0; i < 95; ++i) v.push_back(1.0 + 0.001 * i);
  for (int i = 0; i < 5; ++i) v.push_back(50.0 + i);
  std::rotate(v.begin(), v.begin() + 37, v.end());
  const auto r = exclude_outliers(v);
  EXPECT_TRUE(r.applied);
  ASSERT_EQ(r.excluded.size(), 5u);
  for (auto i : r.excluded) EXPECT_GE(v[i], 50.0);
  EXPECT_EQ(r.kept.size(), 95u);
}

TEST(Outliers, TooFewRuns) {
  std::vector<double> v(10, 1.0);
  v[3] = 1e6;
  const auto r = exclude_outliers(v);
  EXPECT_FALSE(r.applied);
  EXPECT_EQ(r.kept.size(), 10u);
}

TEST(MannWhitney, Examples) {
  const std::vector<double> a = {1, 2}, b = {3, 4};
  EXPECT_EQ(mann_whitney_u(a, b).u, 0.0);
  EXPECT_EQ(mann_whitney_u(b, a).u, 4.0);

  const std::vector<double> x = {1, 5, 2, 8, 3};
  EXPECT_NEAR(mann_whitney_u(x, x).p, 1.0, 1e-12);

  std::vector<double> lo, hi;
  for (int i = 1; i <= 30; ++i) lo.push_back(i), hi.push_back(i + 30);
  const auto r = mann_whitney_u(lo, hi);
  EXPECT_LT(r.p, 0.001);
  EXPECT_GT(r.z, 0.0);

  const std::vector<double> same(6, 2.0);
  EXPECT_EQ(mann_whitney_u(same, same).p, 1.0);
  EXPECT_THROW(mann_whitney_u(std::vector<double>{1}, b), std::invalid_argument);
}

TEST(MannWhitney, UStatisticsSumToProduct) {
  const std::vector<double> x = {1.5, 2, 2, 7, 3}, y = {2, 9, 0.5, 4};
  EXPECT_DOUBLE_EQ(mann_whitney_u(x, y).u + mann_whitney_u(y, x).u, 20.0);
  EXPECT_DOUBLE_EQ(mann_whitney_u(x, y).p, mann_whitney_u(y, x).p);
}

TEST(Compare, StructureAndMissing) {
  std::vector<RunMetrics> a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back(with_gaps({1.0 * i, 2.0}));
    b.push_back(with_gaps({10.0 + i, 2.0}));
  }
  const auto rep = compare_frameworks({{"a", a}, {"b", b}, {"c", {}}});
  ASSERT_EQ(rep.variants.size(), 3u);
  EXPECT_EQ(rep.missing, std::vector<std::string>{"c"});
  EXPECT_EQ(rep.variants[0].runs, 5u);
  EXPECT_DOUBLE_EQ(rep.variants[0].avg.at("time_gap"), (1 + 1.5 + 2 + 2.5 + 3) / 5);
  EXPECT_DOUBLE_EQ(rep.variants[0].pooled.at("time_gap"), (0 + 1 + 2 + 3 + 4 + 5 * 2.0) / 10.0);
  EXPECT_DOUBLE_EQ(rep.variants[0].avg.at("travel_distance_std"), 1.0);
  EXPECT_EQ(rep.tests.size(), metric_defs().size());
  for (const auto& t : rep.tests) {
    EXPECT_EQ(t.a, "a");
    EXPECT_EQ(t.b, "b");
  }
  const auto gap_test = std::find_if(rep.tests.begin(), rep.tests.end(),
                                     [](const PairTest& t) { return t.metric == "time_gap"; });
  EXPECT_LT(gap_test->test.p, 0.05);

  const nlohmann::json j = rep;
  const auto back = j.get<ComparisonReport>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW(nlohmann::json({{"schema", "other"}}).get<ComparisonReport>(), DataError);
}

TEST(Compare, ReportFilesAndMarkdown) {
  std::vector<RunMetrics> a(3, with_gaps({1, 2})), b(3, with_gaps({2, 3}));
  const auto rep = compare_frameworks({{"a", a}, {"b", b}});
  const auto dir = std::filesystem::temp_directory_path() / "mealtwin_report_test";
  std::filesystem::remove_all(dir);
  write_report(dir.string(), rep);
  for (const char* f : {"time_gap.csv", "pickup.csv", "overdue.csv", "balance.csv", "workload.csv",
                        "income.csv", "travel.csv", "pvalues.csv", "summary.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "time_gap.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "variant,runs,excluded,time_gap_avg,time_gap_std,time_gap_std_avg,time_gap_std_std");
  EXPECT_EQ(row.substr(0, 8), "a,3,0,1.");
  std::filesystem::remove_all(dir);

  const auto md = render_markdown(rep);
  EXPECT_NE(md.find("### time_gap"), std::string::npos);
  EXPECT_NE(md.find("| time_gap | 1.500 | 0.000 | 2.500 | 0.000 |"), std::string::npos);
}
