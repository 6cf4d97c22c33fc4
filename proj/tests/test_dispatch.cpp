#include <gtest/gtest.h>

#include <sstream>

#include "mealtwin/dispatch.hpp"
#include "mealtwin/eval.hpp"
#include "oracles.hpp"

using namespace mealtwin;

namespace {

ScenarioConfig quiet(int fleet) {
  ScenarioConfig c = default_scenario();
  for (auto& [key, lambda] : c.hourly_rates) lambda = 0.0;
  c.fleet_size = fleet;
  return c;
}

struct NullDispatch final : DispatchController {
  void run_phase(Simulator&) override {}
};

// Output biases only: q is constant with the favourite action on top.
QNet biased_net(int fleet, int favourite) {
  QNet net = QNet::dispatch_net(fleet, 4);
  auto& p = net.params();
  const std::size_t out_bias = p.size() - static_cast<std::size_t>(fleet + 1);
  p[out_bias + static_cast<std::size_t>(favourite)] = 1.0;
  return net;
}

}  // namespace

TEST(RewardAssign, WorkedExamples) {
  EXPECT_DOUBLE_EQ(reward_assign(2.0, 1, 1), 92.0);
  EXPECT_DOUBLE_EQ(reward_assign(-4.0, 2, 0), 85.0);
  EXPECT_DOUBLE_EQ(reward_assign(-4.0, 2, -3), 85.0);
  EXPECT_DOUBLE_EQ(reward_assign(0.0, 0, 2), 105.0);
}

TEST(RewardAssign, OnlyOneTimingTermActive) {
  Rng rng(3);
  std::uniform_real_distribution<double> gap(-20, 20);
  for (int i = 0; i < 1000; ++i) {
    const double g = gap(rng);
    const double rest = reward_assign(g, 0, 1) - 105.0;
    if (g > 0) {
      EXPECT_NEAR(rest, -5.0 * g, 1e-9);
    }
    else EXPECT_NEAR(rest, g, 1e-9);  // -1 per early minute
  }
  EXPECT_DOUBLE_EQ(reward_assign(0.0, 3, 1), 105.0 - 9.0);
}

TEST(RewardPostpone, OverdueBoundary) {
  const auto c = quiet(1);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  const int old = sim.inject_order(12, 3, 0.0, 0.0);
  NullDispatch nd;
  for (int i = 0; i < 10; ++i) sim.step(nd, nullptr);
  const int fresh = sim.inject_order(12, 3, 8.0, 8.0);
  auto at10 = reward_postpone(sim, old);
  EXPECT_EQ(at10.reward, -10.0);
  EXPECT_FALSE(at10.removed);
  EXPECT_EQ(reward_postpone(sim, fresh).reward, -10.0);
  sim.step(nd, nullptr);
  auto at11 = reward_postpone(sim, old);
  EXPECT_EQ(at11.reward, -100.0);
  EXPECT_TRUE(at11.removed);
}

TEST(EncodeState, IdleCourierAtRestaurant) {
  const auto c = quiet(3);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  sim.place_courier(0, 0);
  sim.place_courier(1, 12);
  sim.place_courier(2, 12);
  const int oid = sim.inject_order(12, 3, 7.5, 8.0);
  const auto enc = encode_state(sim, oid);
  ASSERT_EQ(enc.state.size(), 10u);
  EXPECT_EQ(enc.state[0], 7.5);
  // courier 1: Δt 0, d 0, SD = 2 idle - 1 pending
  EXPECT_EQ(enc.state[4], 0.0);
  EXPECT_EQ(enc.state[5], 0.0);
  EXPECT_EQ(enc.state[6], 1.0);
  EXPECT_EQ(enc.state[2], static_cast<double>(c.region.distance(0, 12)));
  EXPECT_EQ(enc.mask, (Mask{1, 1, 1, 1}));
}

TEST(EncodeState, FullCourierMaskedPostponeValid) {
  const auto c = quiet(2);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  sim.apply_dispatch(sim.inject_order(12, 3, 10, 10), 0);
  sim.apply_dispatch(sim.inject_order(12, 3, 10, 10), 0);
  const int oid = sim.inject_order(12, 3, 10, 10);
  EXPECT_EQ(encode_state(sim, oid).mask, (Mask{0, 1, 1}));
}

TEST(EncodeState, ModesDifferOnlyInGapEntries) {
  const auto c = default_scenario();
  OraclePredictor pred(c);
  Simulator sim(c, &pred, Mode::strategic, {4, 4});
  NearestIdleDispatcher ni;
  for (int i = 0; i < 30; ++i) sim.step(ni, nullptr);
  sim.inject_order(12, 3, 10, 10);
  const int oid = sim.pending_orders_ranked().front();
  const auto s = encode_state(sim, oid);
  sim.set_mode(Mode::myopic);
  const auto m = encode_state(sim, oid);
  bool any_diff = false;
  for (std::size_t i = 0; i < s.state.size(); ++i) {
    const bool gap_entry = i > 0 && (i - 1) % 3 == 2;
    if (!gap_entry) {
      EXPECT_EQ(s.state[i], m.state[i]) << i;
    }
    any_diff = any_diff || s.state[i] != m.state[i];
  }
  EXPECT_TRUE(any_diff);
}

TEST(NextState, PostponeTicksOrderAndCouriers) {
  const std::vector<double> s{4, 5, 2, -1, 0.5, 1, 3};
  const auto p = postponed_next_state(s);
  EXPECT_EQ(p, (std::vector<double>{3, 4, 2, -1, 0, 1, 3}));
}

TEST(NextState, DummyOnlyTicksCourierTimers) {
  const std::vector<double> s{4, 5, 2, -1, 0.5, 1, 3};
  const auto d = dummy_next_state(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0 && (i - 1) % 3 == 0) {
      EXPECT_EQ(d[i], std::max(s[i] - 1, 0.0));
    }
    else EXPECT_EQ(d[i], s[i]);
  }
}

TEST(NearestIdle, Cases) {
  const auto c = quiet(3);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  GridId d1 = -1, d3 = -1;
  for (GridId g = 0; g < 25; ++g) {
    if (d1 < 0 && c.region.distance(g, 12) == 1) d1 = g;
    if (d3 < 0 && c.region.distance(g, 12) == 2) d3 = g;
  }
  sim.place_courier(0, d3);
  sim.place_courier(1, d1);
  sim.place_courier(2, d3);
  const int oid = sim.inject_order(12, 3, 10, 10);
  EXPECT_EQ(nearest_idle_policy(sim, oid), 1);
  sim.apply_dispatch(oid, 1);
  sim.apply_dispatch(sim.inject_order(12, 3, 10, 10), 0);
  const int o2 = sim.inject_order(12, 3, 10, 10);
  EXPECT_EQ(nearest_idle_policy(sim, o2), 2);  // single idle courier left
  sim.apply_dispatch(o2, 2);
  EXPECT_EQ(nearest_idle_policy(sim, sim.inject_order(12, 3, 10, 10)), 3);  // postpone
}

TEST(NearestIdle, TiesSplitAcrossCouriers) {
  const auto c = quiet(2);
  std::set<int> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Simulator sim(c, nullptr, Mode::myopic, {1, seed});
    sim.place_courier(0, 11);
    sim.place_courier(1, 13);
    seen.insert(nearest_idle_policy(sim, sim.inject_order(12, 3, 10, 10)));
  }
  EXPECT_EQ(seen, (std::set<int>{0, 1}));
}

TEST(DdqnDispatch, HandSetWeightsPickCourierThree) {
  const auto c = quiet(5);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  sim.inject_order(12, 3, 10, 10);
  const auto net = biased_net(5, 3);
  DdqnDispatcher d(net);
  d.set_trace(true);
  sim.step(d, nullptr);
  ASSERT_EQ(d.stats().trace.size(), 1u);
  EXPECT_EQ(d.stats().trace[0].action, 3);
  EXPECT_EQ(sim.order(0).courier, 3);
}

TEST(DdqnDispatch, MaskedCourierNeverChosenWhileExploring) {
  const auto c = quiet(3);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  sim.apply_dispatch(sim.inject_order(12, 3, 10, 10), 1);
  sim.apply_dispatch(sim.inject_order(12, 3, 10, 10), 1);
  const int oid = sim.inject_order(12, 3, 10, 10);
  const auto enc = encode_state(sim, oid);
  const std::vector<double> q(4, 0.0);
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) EXPECT_NE(select_action(q, enc.mask, 1.0, rng), 1);
}

TEST(DdqnDispatch, IdenticalTriplesGiveSameDecision) {
  const auto c = quiet(4);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  for (int i = 0; i < 4; ++i) sim.place_courier(i, 12);
  const int oid = sim.inject_order(12, 3, 10, 10);
  auto net = QNet::dispatch_net(4, 8);
  Rng rng(6);
  net.init_uniform(rng);
  const auto enc = encode_state(sim, oid);
  // couriers 0 and 2 share a triple; exchanging their slots leaves the input unchanged
  auto swapped = enc.state;
  for (int k = 0; k < 3; ++k) std::swap(swapped[1 + k], swapped[1 + 6 + k]);
  EXPECT_EQ(greedy_action(net.forward(enc.state), enc.mask), greedy_action(net.forward(swapped), enc.mask));
}

TEST(DdqnDispatch, TransitionsCarryScaledRewards) {
  const auto c = default_scenario();
  DdqnParams p;
  p.buffer = 100000;
  p.batch = 100000;  // no learning, keep every transition
  auto net = QNet::dispatch_net(c.fleet_size);
  Rng rng(5);
  net.init_uniform(rng);
  DdqnAgent agent(net, p, 5);
  DdqnDispatcher d(agent);
  d.set_trace(true);
  Simulator sim(c, nullptr, Mode::myopic, {8, 8});
  sim.run(d, nullptr);
  const auto& trace = d.stats().trace;
  ASSERT_EQ(agent.buffer().size(), trace.size());
  ASSERT_GT(trace.size(), 100u);
  double total = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(agent.buffer().at(i).r, trace[i].reward / kRewardScale);
    EXPECT_EQ(agent.buffer().at(i).a, trace[i].action);
    total += trace[i].reward;
  }
  EXPECT_DOUBLE_EQ(total, d.stats().episode_return);
}

TEST(DdqnDispatch, LoggedAssignmentsRecomputeRewards) {
  const auto c = default_scenario();
  OraclePredictor pred(c);
  auto net = QNet::dispatch_net(c.fleet_size);
  Rng rng(15);
  net.init_uniform(rng);
  DdqnDispatcher d(net);
  d.set_trace(true);
  Simulator sim(c, &pred, Mode::strategic, {9, 9});
  sim.run(d, nullptr);

  std::map<int, double> ready, placed;
  std::map<int, double> replayed;
  for (const auto& e : sim.log().events()) {
    const auto id = e.entity.rfind("order:", 0) == 0 ? std::stoi(e.entity.substr(6)) : -1;
    const auto kv = parse_detail(e.detail);
    if (e.event == "placed") ready[id] = e.time + std::stod(kv.at("actual_prep"));
    if (e.event == "assigned") {
      const int dist = std::stoi(kv.at("pickup_distance"));
      replayed[id] = oracle::assign_reward(e.time + std::stod(kv.at("eta")) + 3.0 * dist, ready.at(id), dist,
                                           std::stoi(kv.at("courier_gap")));
    }
  }
  int checked = 0;
  for (const auto& row : d.stats().trace) {
    if (row.action == c.fleet_size) continue;
    EXPECT_EQ(row.reward, replayed.at(row.order));
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(DdqnDispatch, PostponedOrderReturnsNextMinute) {
  const auto c = quiet(2);
  Simulator sim(c, nullptr, Mode::myopic, {1, 1});
  const auto net = biased_net(2, 2);  // always postpone
  DdqnDispatcher d(net);
  d.set_trace(true);
  const int oid = sim.inject_order(12, 3, 3, 3);
  sim.step(d, nullptr);
  EXPECT_EQ(sim.pending_orders_ranked(), std::vector<int>{oid});
  sim.step(d, nullptr);
  ASSERT_EQ(d.stats().trace.size(), 2u);
  EXPECT_EQ(d.stats().trace[1].order, oid);
  EXPECT_EQ(d.stats().trace[1].reward, -10.0);
}

TEST(DispatchTrace, CsvShape) {
  std::ostringstream out;
  write_dispatch_trace(out, {{3, 7, 2, 92.5, 0.25}, {4, 8, 25, -10, std::numeric_limits<double>::quiet_NaN()}});
  EXPECT_EQ(out.str(), "minute,order,action,reward,q_max\n3,7,2,92.5,0.25\n4,8,25,-10,\n");
}
