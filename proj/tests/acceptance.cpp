// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mealtwin/dispatch.hpp"
#include "mealtwin/experiment.hpp"
#include "mealtwin/forecast.hpp"
#include "mealtwin/hexgrid.hpp"
#include "mealtwin/rlcore.hpp"
#include "mealtwin/scenario.hpp"
#include "mealtwin/simcore.hpp"
#include "mealtwin/steering.hpp"
#include "mealtwin/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mealtwin;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// --- 1: hex metric -------------------------------------------------------

Outcome hex_metric() {
  const auto t0 = Clock::now();
  const auto region = ServiceRegion::default_5x5();
  long violations = 0, triples = 0;
  for (const auto& a : region.cells()) {
    if (region.distance(a.id, a.id) != 0) ++violations;
    for (const auto& b : region.cells()) {
      const int ab = region.distance(a.id, b.id);
      if (ab != region.distance(b.id, a.id)) ++violations;
      if (a.id != b.id && ab <= 0) ++violations;
      if (ab != oracle::region_hops(region, a.id, b.id)) ++violations;
      for (const auto& c : region.cells()) {
        ++triples;
        if (region.distance(a.id, c.id) > ab + region.distance(b.id, c.id)) ++violations;
      }
    }
  }
  long pairs = 0;
  for (const auto& [src, d0] : oracle::bfs_hops({0, 0}, 6)) {
    const HexCoord a{src.first, src.second};
    for (const auto& [dst, hops] : oracle::bfs_hops(a, 6)) {
      ++pairs;
      if (hex_distance(a, {dst.first, dst.second}) != hops) ++violations;
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 1.0, std::to_string(triples) + " triples, " + std::to_string(pairs) +
                                             " BFS pairs, " + std::to_string(violations) + " violations, " +
                                             fmt(secs) + " s"};
}

// --- 2: gradient check ---------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(2, {stream::kInit}));
  std::uniform_real_distribution<double> u(-3, 3), dt(0, 30), sd(-4, 4);
  std::uniform_int_distribution<int> dist(0, 6);
  double worst = 0.0;
  int probes = 0;
  for (bool conv : {true, false}) {
    QNet net = conv ? QNet::dispatch_net(25) : QNet::steering_net();
    for (int p = 0; p < 100; ++p) {
      if (p % 10 == 0) {
        net.init_uniform(rng);
        for (auto& w : net.params()) w += 0.02 * u(rng);  // biases away from zero
      }
      std::vector<double> x;
      if (conv) {
        x.push_back(dt(rng) - 10);
        for (int c = 0; c < 25; ++c) {
          x.push_back(dt(rng));
          x.push_back(dist(rng));
          x.push_back(sd(rng));
        }
      } else {
        for (int i = 0; i < 14; ++i) x.push_back(u(rng));
      }
      std::vector<double> target(static_cast<std::size_t>(net.output_size()));
      for (auto& t : target) t = u(rng);
      worst = std::max(worst, oracle::gradient_check(net, x, target));
      ++probes;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0, std::to_string(probes) + " probes over both architectures, max relative error " +
                                           std::to_string(worst) + ", " + fmt(secs) + " s"};
}

// --- 3: reward oracles ---------------------------------------------------

// Assigns every pending order to a random eligible courier and compares the
// library reward with the independent recomputation.
struct CheckingDispatcher final : DispatchController {
  int checked = 0;
  int mismatches = 0;
  int wanted = 1000;
  void run_phase(Simulator& sim) override {
    for (int oid : sim.pending_orders_ranked()) {
      std::vector<int> eligible;
      for (const auto& c : sim.couriers()) {
        if (sim.dispatch_eligible(c.id)) eligible.push_back(c.id);
      }
      if (eligible.empty() || checked >= wanted) {
        sim.apply_postpone(oid);
        continue;
      }
      std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
      const int cid = eligible[pick(sim.policy_rng())];
      const Order o = sim.order(oid);
      const CourierEta eta = sim.courier_eta_idle(cid);
      const int d = oracle::region_hops(sim.region(), eta.grid, o.restaurant);
      const int gap = sim.supply_demand_gap(eta.grid, sim.horizon());
      const double expect = oracle::assign_reward(sim.clock() + eta.minutes + 3.0 * d, o.ready_time(), d, gap);

      const auto info = sim.apply_dispatch(oid, cid);
      const double got =
          reward_assign(info.expected_arrival - o.ready_time(), info.pickup_distance, info.courier_gap);
      ++checked;
      if (got != expect) ++mismatches;
    }
  }
};

// Moves every eligible courier to a random neighbour and compares rewards.
struct CheckingSteerer final : SteeringController {
  int checked = 0;
  int mismatches = 0;
  void run_phase(Simulator& sim) override {
    for (int cid : sim.steering_eligible()) {
      const GridId from = sim.courier(cid).grid;
      std::vector<GridId> options;
      for (const auto& n : sim.region().neighbors(from)) {
        if (n) options.push_back(*n);
      }
      std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
      const GridId to = options[pick(sim.policy_rng())];
      const auto gap = sim.gap_field(sim.horizon());
      const double got = reward_reallocate(sim.region(), gap, from, to);
      const double expect = oracle::reallocate_reward(sim.region(), gap, from, to);
      ++checked;
      if (got != expect) ++mismatches;
      sim.apply_reallocation(cid, to);
    }
  }
};

Outcome reward_oracles() {
  const auto sc = default_scenario();
  const OraclePredictor pred(sc);
  CheckingDispatcher d;
  CheckingSteerer s;
  for (std::uint64_t seed = 1; (d.checked < 1000 || s.checked < 1000) && seed < 200; ++seed) {
    Simulator sim(sc, &pred, seed % 2 ? Mode::strategic : Mode::myopic, {seed, seed + 1000}, false);
    while (!sim.done() && (d.checked < 1000 || s.checked < 1000)) {
      sim.step(d, s.checked < 1000 ? &s : nullptr);
    }
  }
  const bool ok = d.checked >= 1000 && s.checked >= 1000 && d.mismatches == 0 && s.mismatches == 0;
  return {ok, std::to_string(d.checked) + " dispatch instances (" + std::to_string(d.mismatches) + " mismatches), " +
                  std::to_string(s.checked) + " steering instances (" + std::to_string(s.mismatches) +
                  " mismatches)"};
}

// --- 4: sampler statistics -----------------------------------------------

Outcome sampler_stats() {
  const auto sc = default_scenario();
  const int shifts = 2000;
  std::map<GridId, double> total;
  Rng rng(derive_seed(4, {stream::kOrders}));
  for (int s = 0; s < shifts; ++s) {
    int next = 0;
    for (int m = 0; m < sc.shift_minutes; ++m) {
      for (const auto& o : sample_orders(sc, m, rng, next)) total[o.restaurant] += 1;
    }
  }
  double worst_z = 0.0;
  for (GridId g : sc.region.restaurant_grids()) {
    double expect = 0.0;
    for (int m = 0; m < sc.shift_minutes; ++m) expect += sc.rate(g, sc.hour_of(m)) / 60.0;
    const double mean = total[g] / shifts;
    const double se = std::sqrt(expect / shifts);
    worst_z = std::max(worst_z, std::abs(mean - expect) / se);
  }
  const int draws = 100000;
  double est = 0, act = 0, dev = 0, dev2 = 0;
  Rng prng(derive_seed(4, {stream::kFleet}));
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_prep(sc, prng);
    est += p.estimated;
    act += p.actual;
    dev += p.actual - p.estimated;
    dev2 += (p.actual - p.estimated) * (p.actual - p.estimated);
  }
  est /= draws;
  act /= draws;
  dev /= draws;
  const double dev_var = dev2 / draws - dev * dev;
  const bool ok = worst_z <= 3.0 && est >= 9.97 && est <= 10.03 && act >= 9.97 && act <= 10.03 &&
                  dev_var >= 0.97 && dev_var <= 1.03;
  return {ok, "largest per-grid deviation " + fmt(worst_z, 2) + " SE over " + std::to_string(shifts) +
                  " shifts; prep mean " + fmt(est, 4) + " (actual " + fmt(act, 4) + "), deviation variance " +
                  fmt(dev_var, 4)};
}

// --- 5: DDQN on the bandit -----------------------------------------------

Outcome ddqn_bandit() {
  const auto t0 = Clock::now();
  const ToyMdp bandits[] = {make_bandit(1.0, 0.0), make_bandit(0.0, 1.0)};
  int oracle_action[2];
  for (int k = 0; k < 2; ++k) {
    Rng trng(derive_seed(5, {static_cast<std::uint64_t>(k)}));
    oracle_action[k] = greedy_action(tabular_q_learning(bandits[k], 500, 0.1, 0.8, 0.3, trng)[0], {1, 1});
  }
  const int trials = 100;
  const std::int64_t updates = 500;
  int correct = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const auto& mdp = bandits[trial % 2];
    const auto seed = derive_seed(5, {static_cast<std::uint64_t>(trial), 99});
    DdqnParams p;
    p.batch = 32;
    p.buffer = 500;
    p.learn_every = 1;
    p.target_every = 20;
    p.lr = 1e-2;
    DdqnAgent agent(QNet(false, {{1, 8, Activation::relu}, {8, 2, Activation::linear}}), p, seed);
    Rng init(derive_seed(seed, {stream::kInit}));
    agent.net().init_uniform(init);
    agent.start_phase();
    Rng act(derive_seed(seed, {stream::kPolicy}));
    const std::vector<double> s{1.0};
    while (agent.learn_updates() < updates) {
      const int a = select_action(agent.net().forward(s), {1, 1}, agent.current_epsilon(), act);
      agent.record({s, a, mdp.reward[0][static_cast<std::size_t>(a)], s, true, {1, 1}});
      agent.on_decision();
      agent.on_step();
    }
    correct += greedy_action(agent.net().forward(s), {1, 1}) == oracle_action[trial % 2];
  }
  const double rate = static_cast<double>(correct) / trials;
  const double secs = seconds_since(t0);
  const bool ok = oracle_action[0] == 0 && oracle_action[1] == 1 && rate >= 0.95 && secs < 30.0;
  return {ok, "greedy-correct " + fmt(100 * rate, 1) + "% of " + std::to_string(trials) + " trials after " +
                  std::to_string(updates) + " updates (paying arm alternates), " + fmt(secs, 1) + " s"};
}

// --- 6: determinism through the CLI --------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(MEALTWIN_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "latency.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = s.str();
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  const auto t0 = Clock::now();
  std::map<std::string, std::string> trees[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = work / ("determinism_" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const nlohmann::json cfg = {{"schema", "mealtwin.experiment/1"},
                                {"plan", {{"seed", 1}}},
                                {"eval", {{"shifts", 100}, {"seed", 7}, {"workers", run == 0 ? 1 : 3}}},
                                {"trace", {{"logs", true}}},
                                {"output_dir", (dir / "out").string()}};
    std::ofstream(dir / "exp.json") << cfg.dump(1);
    const auto cfg_path = (dir / "exp.json").string();
    if (run_cli("train --config " + cfg_path, dir / "train.txt") != 0 ||
        run_cli("evaluate --config " + cfg_path, dir / "evaluate.txt") != 0) {
      return {false, "CLI run " + std::to_string(run) + " failed, see " + dir.string()};
    }
    trees[run] = tree_contents(dir / "out");
  }
  int weights = 0, logs = 0, reports = 0, differing = 0;
  for (const auto& [name, body] : trees[0]) {
    auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != body) ++differing;
    if (name.rfind("report/logs/", 0) == 0) ++logs;
    else if (name.rfind("report/", 0) == 0) ++reports;
    else if (name.find("dispatch") != std::string::npos || name.find("steering") != std::string::npos) ++weights;
  }
  const bool same_set = trees[0].size() == trees[1].size();
  const bool ok = same_set && differing == 0 && weights == 6 && logs == 600 && reports > 0;
  return {ok, std::to_string(trees[0].size()) + " files compared (" + std::to_string(weights) + " weight files, " +
                  std::to_string(logs) + " event logs, " + std::to_string(reports) + " report files; workers 1 vs 3), " +
                  std::to_string(differing) + " differ, " + fmt(seconds_since(t0), 0) + " s"};
}

// --- 7..10, 12: directional reproductions -------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, std::map<std::string, double>> avg;  // variant -> metric -> mean over runs
  double nearest_idle_secs = 0.0;
  double p99_latency = 0.0;
  std::size_t decisions = 0;
};

SeedResult run_seed(std::uint64_t seed, const ScenarioConfig& sc, const DemandPredictor& pred) {
  SeedResult r;
  r.seed = seed;
  ExperimentConfig cfg;
  cfg.plan.seed = seed;
  PolicySet set;
  for (Mode m : {Mode::strategic, Mode::myopic}) {
    const auto t0 = Clock::now();
    auto trained = sandwich_train(cfg.plan, sc, &pred, m);
    std::cerr << "  seed " << seed << " " << to_string(m) << " trained in " << fmt(seconds_since(t0), 1) << " s\n";
    set.dispatch_solo[m] = trained.dispatch_solo;
    set.steering[m] = trained.steering;
    set.dispatch_final[m] = trained.dispatch_final;
  }
  const auto t0 = Clock::now();
  const auto ni = evaluate_variants({Variant::nearest_idle}, sc, &pred, set, cfg.eval_shifts, cfg.eval_seed, 1);
  r.nearest_idle_secs = seconds_since(t0);
  const std::vector<Variant> learned = {Variant::strategic, Variant::strategic_steer, Variant::myopic,
                                        Variant::myopic_steer, Variant::nearest_idle_steer};
  const auto runs = evaluate_variants(learned, sc, &pred, set, cfg.eval_shifts, cfg.eval_seed, 1, true);
  std::vector<double> latency;
  for (const auto& v : runs) latency.insert(latency.end(), v.latency_sec.begin(), v.latency_sec.end());
  r.decisions = latency.size();
  r.p99_latency = latency.empty() ? 0.0 : percentile(latency, 0.99);
  for (const auto* list : {&ni, &runs}) {
    for (const auto& v : build_report(*list).variants) r.avg[v.variant] = v.avg;
  }
  return r;
}

struct Judged {
  bool pass = false;
  std::string detail;
};

Outcome majority(const std::vector<SeedResult>& seeds, const std::function<Judged(const SeedResult&)>& judge) {
  int passed = 0;
  std::string detail;
  for (const auto& s : seeds) {
    const auto j = judge(s);
    passed += j.pass;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(s.seed) + " " +
              (j.pass ? "ok" : "no") + " [" + j.detail + "]";
  }
  return {passed >= 2, std::to_string(passed) + "/" + std::to_string(seeds.size()) + " seeds: " + detail};
}

// --- 11: forecaster ------------------------------------------------------

Outcome forecaster(const ForecasterReport& rep) {
  return {rep.mean_mae <= rep.persistence_mean_mae,
          "holdout MAE " + fmt(rep.mean_mae, 4) + " vs persistence " + fmt(rep.persistence_mean_mae, 4)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance runner"};
  std::string work = "acceptance_work";
  app.add_option("--work-dir", work, "scratch directory for CLI runs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int n, const std::string& what, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << what << " -- " << o.detail
              << std::endl;
    failures += !o.pass;
  };

  report(1, "hex metric laws and BFS agreement", hex_metric());
  report(2, "analytic vs finite-difference gradients", gradient_check());
  report(3, "reward oracles", reward_oracles());
  report(4, "sampler statistics", sampler_stats());
  report(5, "DDQN on the two-armed bandit", ddqn_bandit());
  report(6, "byte-identical train+evaluate runs", determinism(work));

  const ExperimentConfig defaults;
  const auto sc = default_scenario(defaults.scenario_seed);
  auto [model, frep] = fit_forecaster(sc, defaults.history_weeks, defaults.history_seed);
  std::vector<SeedResult> seeds;
  for (std::uint64_t s = 1; s <= 3; ++s) seeds.push_back(run_seed(s, sc, model));

  report(7, "nearest-idle baseline", majority(seeds, [](const SeedResult& s) {
           const auto& m = s.avg.at("nearest_idle");
           const double gap = m.at("time_gap"), overdue = m.at("overdue_rate");
           return Judged{gap >= -8 && gap <= -1 && overdue == 0.0 && s.nearest_idle_secs < 300,
                         "gap " + fmt(gap) + ", overdue " + fmt(100 * overdue, 2) + "%, " +
                             fmt(s.nearest_idle_secs, 1) + " s"};
         }));
  report(8, "strategic dispatch gap and overdue", majority(seeds, [](const SeedResult& s) {
           const auto& m = s.avg.at("strategic");
           const double gap = m.at("time_gap"), overdue = m.at("overdue_rate");
           return Judged{gap < 0 && overdue <= 0.01, "gap " + fmt(gap) + ", overdue " + fmt(100 * overdue, 2) + "%"};
         }));
  report(9, "strategic pickup distance <= myopic", majority(seeds, [](const SeedResult& s) {
           const double a = s.avg.at("strategic").at("pickup_distance");
           const double b = s.avg.at("myopic").at("pickup_distance");
           return Judged{a <= b, fmt(a) + " vs " + fmt(b)};
         }));
  report(10, "steering effect on strategic dispatch", majority(seeds, [](const SeedResult& s) {
           const auto& a = s.avg.at("strategic");
           const auto& b = s.avg.at("strategic_steer");
           const double pick0 = a.at("pickup_distance"), pick1 = b.at("pickup_distance");
           const double sd0 = a.at("travel_distance_std"), sd1 = b.at("travel_distance_std");
           const double mu0 = a.at("travel_distance"), mu1 = b.at("travel_distance");
           const bool ok = pick1 < pick0 && sd1 <= 0.9 * sd0 && mu1 > mu0;
           return Judged{ok, "pickup " + fmt(pick0) + "->" + fmt(pick1) + ", travel std " + fmt(sd0) + "->" +
                                 fmt(sd1) + " (" + fmt(100 * (1 - sd1 / sd0), 1) + "% lower), travel mean " +
                                 fmt(mu0, 2) + "->" + fmt(mu1, 2)};
         }));
  report(11, "forecaster vs persistence", forecaster(frep));

  bool latency_ok = true;
  std::string latency_detail;
  for (const auto& s : seeds) {
    latency_ok = latency_ok && s.decisions > 0 && s.p99_latency < 0.1;
    latency_detail += (latency_detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(s.seed) +
                      " p99 " + std::to_string(s.p99_latency) + " s over " + std::to_string(s.decisions) +
                      " decisions";
  }
  report(12, "decision latency p99 < 0.1 s", {latency_ok, latency_detail});

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
