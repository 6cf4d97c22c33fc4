// Command-line front end: scenario generation, training, simulation,
// evaluation and reporting.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mealtwin/dispatch.hpp"
#include "mealtwin/errors.hpp"
#include "mealtwin/eval.hpp"
#include "mealtwin/experiment.hpp"
#include "mealtwin/forecast.hpp"
#include "mealtwin/scenario.hpp"
#include "mealtwin/trainer.hpp"

namespace fs = std::filesystem;
using namespace mealtwin;

namespace {

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

ScenarioConfig scenario_for(const ExperimentConfig& cfg) {
  return cfg.scenario_path.empty() ? default_scenario(cfg.scenario_seed) : load_scenario(cfg.scenario_path);
}

// gbt predictor: reuse dir/forecaster.json when present, otherwise fit and
// store it there.
std::unique_ptr<DemandPredictor> make_predictor(const ExperimentConfig& cfg, const ScenarioConfig& sc,
                                                const fs::path& dir) {
  if (cfg.predictor == "oracle") return std::make_unique<OraclePredictor>(sc);
  const auto path = dir / "forecaster.json";
  if (fs::exists(path)) return std::make_unique<GbtForecaster>(GbtForecaster::load(path.string()));
  auto [model, report] = fit_forecaster(sc, cfg.history_weeks, cfg.history_seed);
  fs::create_directories(dir);
  model.save(path.string());
  std::cerr << "forecaster fitted: holdout MAE " << report.mean_mae << " (persistence "
            << report.persistence_mean_mae << ")\n";
  return std::make_unique<GbtForecaster>(std::move(model));
}

std::vector<Mode> modes_needed(const std::vector<Variant>& variants) {
  std::vector<Mode> out;
  for (Variant v : variants) {
    const std::vector<Mode> need = required_modes(v);
    for (Mode m : need) {
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// grid,hour,orders_per_hour rows; the listed grids become the restaurant set.
void apply_rate_table(ScenarioConfig& sc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rate table " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("grid,hour,", 0) != 0) throw DataError("rate table header must be grid,hour,orders_per_hour");
  sc.hourly_rates.clear();
  sc.od_probs.clear();
  for (GridId g = 0; g < static_cast<GridId>(sc.region.size()); ++g) sc.region.set_restaurant(g, false);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c)) {
      throw DataError("rate table line " + std::to_string(lineno) + " needs three fields");
    }
    int grid = 0, hour = 0;
    double rate = 0.0;
    auto bad = [&] { return DataError("rate table line " + std::to_string(lineno) + " is malformed"); };
    if (std::from_chars(a.data(), a.data() + a.size(), grid).ec != std::errc{}) throw bad();
    if (std::from_chars(b.data(), b.data() + b.size(), hour).ec != std::errc{}) throw bad();
    if (std::from_chars(c.data(), c.data() + c.size(), rate).ec != std::errc{}) throw bad();
    if (!sc.region.contains(grid)) throw DataError("rate table grid " + a + " outside the region");
    if (hour < 0 || hour > 23 || !(rate >= 0.0)) throw bad();
    sc.region.set_restaurant(grid, true);
    sc.hourly_rates[{grid, hour}] = rate;
    sc.od_probs[grid] = std::vector<double>(sc.region.size(), 1.0 / static_cast<double>(sc.region.size()));
  }
  if (sc.hourly_rates.empty()) throw DataError("rate table is empty");
}

int cmd_gen_scenario(const std::string& out, int fleet, std::uint64_t seed, int cols, int rows,
                     const std::string& rates, int shift_start) {
  if (cols < 1 || rows < 1 || cols > 64 || rows > 64) throw ConfigError("region dimensions must lie in 1..64");
  ScenarioConfig sc = default_scenario(seed);
  if (cols != 5 || rows != 5) {
    // Non-default regions: every interior grid hosts restaurants and the
    // default city-wide demand is split evenly among them.
    const double total = 63.0;
    sc.region = ServiceRegion::rectangle(cols, rows, "custom");
    sc.hourly_rates.clear();
    sc.od_probs.clear();
    std::vector<GridId> interior;
    for (const auto& cell : sc.region.cells()) {
      sc.region.set_restaurant(cell.id, false);
      const auto nb = sc.region.neighbors(cell.id);
      if (std::all_of(nb.begin(), nb.end(), [](const auto& o) { return o.has_value(); })) {
        interior.push_back(cell.id);
      }
    }
    if (interior.empty()) interior.push_back(0);
    for (GridId g : interior) {
      sc.region.set_restaurant(g, true);
      for (int h : {18, 19, 20}) {
        const double f = h == 18 ? 0.8 : (h == 19 ? 1.1 : 0.9);
        sc.hourly_rates[{g, h}] = total / static_cast<double>(interior.size()) * f;
      }
      sc.od_probs[g] = std::vector<double>(sc.region.size(), 1.0 / static_cast<double>(sc.region.size()));
    }
  }
  if (!rates.empty()) apply_rate_table(sc, rates);
  sc.fleet_size = fleet;
  sc.shift_start_hour = shift_start;
  sc.validate();
  save_scenario(out, sc);
  std::cout << "wrote " << out << ": " << sc.region.size() << " grids, "
            << sc.region.restaurant_grids().size() << " restaurant grids, fleet " << sc.fleet_size << "\n";
  return 0;
}

int cmd_synth_history(const std::string& scenario, int weeks, std::uint64_t seed, const std::string& out) {
  const ScenarioConfig sc = scenario.empty() ? default_scenario() : load_scenario(scenario);
  Rng rng(derive_seed(seed, {stream::kHistory}));
  const auto history = synth_history(sc, weeks, rng);
  auto f = open_out(out);
  write_transactions_csv(f, history);
  std::cout << "wrote " << history.size() << " transactions to " << out << "\n";
  return 0;
}

void write_returns_csv(const fs::path& p, const TrainingReport& r) {
  auto out = open_out(p);
  out << "phase,episode,return\n";
  for (const auto& ph : r.phases) {
    for (std::size_t e = 0; e < ph.returns.size(); ++e) {
      out << ph.name << ',' << e << ',' << format_number(ph.returns[e]) << '\n';
    }
  }
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  auto cfg = load_experiment(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  const fs::path dir = cfg.output_dir;
  const auto sc = scenario_for(cfg);
  const auto predictor = make_predictor(cfg, sc, dir);

  PolicySet set;
  for (Mode m : modes_needed(cfg.variants)) {
    std::cerr << "training " << to_string(m) << " policies\n";
    auto trained = sandwich_train(cfg.plan, sc, predictor.get(), m);
    set.dispatch_solo[m] = trained.dispatch_solo;
    set.steering[m] = trained.steering;
    set.dispatch_final[m] = trained.dispatch_final;
    for (const char* kind : {"dispatch_solo", "steering", "dispatch_final"}) {
      trained.report.weight_files.push_back(policy_file(kind, m));
    }
    auto rep = open_out(dir / ("training_report_" + std::string(to_string(m)) + ".json"));
    rep << nlohmann::json(trained.report).dump(1) << '\n';
    write_returns_csv(dir / ("returns_" + std::string(to_string(m)) + ".csv"), trained.report);
    for (const auto& ph : trained.report.phases) {
      std::cerr << "  " << ph.name << ": " << ph.returns.size() << " episodes, "
                << (ph.assessed ? (ph.converged ? "converged" : "not converged") : "unassessed") << "\n";
    }
    std::cerr << "  wall time " << trained.report.wall_seconds << " s\n";
  }
  set.save(dir.string());
  std::cout << "weights written to " << dir.string() << "\n";
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& variant, int shift,
                 const std::string& weights, const std::string& out, const std::string& trace_dir) {
  const auto cfg = load_experiment(config_path);
  const Variant v = parse_variant(variant);
  const auto sc = scenario_for(cfg);
  const fs::path wdir = weights.empty() ? cfg.output_dir : weights;
  const PolicySet set = PolicySet::load(wdir.string());
  set.require(v);
  const auto predictor = make_predictor(cfg, sc, wdir);
  ShiftOptions opts;
  opts.trace = !trace_dir.empty() || cfg.trace_dispatch || cfg.trace_steering;
  auto res = run_shift(v, sc, predictor.get(), set, evaluation_seeds(cfg.eval_seed, shift), opts);
  auto f = open_out(out);
  res.log.write_csv(f);
  if (opts.trace) {
    const fs::path tdir = trace_dir.empty() ? fs::path(cfg.output_dir) / "trace" : fs::path(trace_dir);
    auto d = open_out(tdir / "dispatch_trace.csv");
    write_dispatch_trace(d, res.dispatch.trace);
    if (uses_steering(v)) {
      auto s = open_out(tdir / "steering_trace.csv");
      write_steer_trace(s, res.steering.trace);
    }
  }
  const auto m = compute_metrics(res.log, sc.fleet_size);
  std::cout << "orders " << m.sampled << ", delivered " << m.delivered << ", overdue " << m.overdue
            << ", mean time gap " << m.gap_mean() << ", mean pickup distance " << m.pickup_mean() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& weights, const std::string& out,
                 int workers, int shifts) {
  auto cfg = load_experiment(config_path);
  if (workers > 0) cfg.workers = workers;
  if (shifts > 0) cfg.eval_shifts = shifts;
  const auto sc = scenario_for(cfg);
  const fs::path wdir = weights.empty() ? cfg.output_dir : weights;
  const fs::path odir = out.empty() ? fs::path(cfg.output_dir) / "report" : fs::path(out);
  const PolicySet set = PolicySet::load(wdir.string());
  for (Variant v : cfg.variants) set.require(v);
  const auto predictor = make_predictor(cfg, sc, wdir);

  std::function<void(Variant, int, const ShiftResult&)> sink;
  if (cfg.write_logs) {
    sink = [&](Variant v, int shift, const ShiftResult& r) {
      auto f = open_out(odir / "logs" / (std::string(to_string(v)) + "_" + std::to_string(shift) + ".csv"));
      r.log.write_csv(f);
    };
  }
  const auto runs = evaluate_variants(cfg.variants, sc, predictor.get(), set, cfg.eval_shifts, cfg.eval_seed,
                                      cfg.workers, true, sink);
  const auto report = build_report(runs);
  write_report(odir.string(), report);

  nlohmann::json lat = nlohmann::json::object();
  for (const auto& r : runs) {
    if (r.latency_sec.empty()) continue;
    lat[to_string(r.variant)] = {{"decisions", r.latency_sec.size()},
                                 {"p99_sec", percentile(r.latency_sec, 0.99)},
                                 {"mean_sec", mean(r.latency_sec)}};
  }
  // timings vary run to run, so they live apart from the deterministic report
  auto lf = open_out(odir / "latency.json");
  lf << lat.dump(1) << '\n';
  std::cout << render_markdown(report);
  return 0;
}

int cmd_forecast_eval(const std::string& scenario, int weeks, std::uint64_t seed, const std::string& out,
                      const GbtParams& params) {
  const ScenarioConfig sc = scenario.empty() ? default_scenario() : load_scenario(scenario);
  auto [model, rep] = fit_forecaster(sc, weeks, seed, params);
  std::cout << "grid,model_mae,model_rmse,persistence_mae,persistence_rmse\n";
  for (const auto& [g, e] : rep.model_error) {
    const auto& p = rep.persistence_error.at(g);
    std::cout << g << ',' << e.mae << ',' << e.rmse << ',' << p.mae << ',' << p.rmse << '\n';
  }
  std::cout << "mean," << rep.mean_mae << ',' << rep.mean_rmse << ',' << rep.persistence_mean_mae << ','
            << rep.persistence_mean_rmse << '\n';
  if (!out.empty()) model.save(out);
  return 0;
}

int cmd_snapshot(const std::string& log_path, int minute, const std::string& scenario, const std::string& out) {
  std::ifstream in(log_path);
  if (!in) throw DataError("cannot open event log " + log_path);
  const auto log = EventLog::read_csv(in);
  const ScenarioConfig sc = scenario.empty() ? default_scenario() : load_scenario(scenario);
  if (minute < 0 || minute >= sc.shift_minutes) {
    throw DataError("minute " + std::to_string(minute) + " outside the shift");
  }
  const auto snap = snapshot_at(log, minute);
  auto f = open_out(out);
  f << render_snapshot_svg(sc.region, snap);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_report(const std::string& summary, const std::string& out) {
  std::ifstream in(summary);
  if (!in) throw DataError("cannot open " + summary);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(summary + ": " + e.what());
  }
  const auto rep = j.get<ComparisonReport>();
  std::ostringstream md;
  md << render_markdown(rep);
  md << "### significance (p < 0.05)\n\n| metric | a | b | p |\n|---|---|---|---:|\n";
  for (const auto& t : rep.tests) {
    if (t.test.p < 0.05) md << "| " << t.metric << " | " << t.a << " | " << t.b << " | " << t.test.p << " |\n";
  }
  if (out.empty()) {
    std::cout << md.str();
  } else {
    auto f = open_out(out);
    f << md.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meal-delivery digital twin with learned dispatching and courier steering"};
  app.require_subcommand(1);

  std::string out, scenario, config, weights, variant, trace_dir, log_path, summary, rates;
  int fleet = 25, cols = 5, rows = 5, weeks = 26, shift = 0, workers = 0, shifts = 0, minute = 0;
  int shift_start = 19;
  std::uint64_t seed = 2024;
  GbtParams gbt;

  auto* gen = app.add_subcommand("gen-scenario", "write a scenario document");
  gen->add_option("--out", out, "output path")->required();
  gen->add_option("--fleet", fleet, "number of couriers")->check(CLI::Range(1, 10000));
  gen->add_option("--seed", seed, "scenario seed");
  gen->add_option("--cols", cols, "region columns");
  gen->add_option("--rows", rows, "region rows");
  gen->add_option("--rates", rates, "CSV rate table grid,hour,orders_per_hour");
  gen->add_option("--shift-start", shift_start, "shift start hour")->check(CLI::Range(0, 23));

  auto* hist = app.add_subcommand("synth-history", "write synthetic transaction history");
  hist->add_option("--scenario", scenario, "scenario document (default scenario if omitted)");
  hist->add_option("--weeks", weeks, "weeks of history")->check(CLI::Range(1, 520));
  hist->add_option("--seed", seed, "history seed");
  hist->add_option("--out", out, "output CSV")->required();

  auto* train = app.add_subcommand("train", "sandwich-train dispatch and steering policies");
  train->add_option("--config", config, "experiment document")->required();
  train->add_option("--out", out, "output directory (overrides the config)");

  auto* sim = app.add_subcommand("simulate", "run one shift and write its event log");
  sim->add_option("--config", config, "experiment document")->required();
  sim->add_option("--variant", variant, "framework variant")->required();
  sim->add_option("--shift", shift, "evaluation shift index")->check(CLI::NonNegativeNumber);
  sim->add_option("--weights", weights, "weights directory (default: output_dir)");
  sim->add_option("--out", out, "event log CSV")->required();
  sim->add_option("--trace-dir", trace_dir, "write decision traces here");

  auto* eval = app.add_subcommand("evaluate", "compare variants over matched shifts");
  eval->add_option("--config", config, "experiment document")->required();
  eval->add_option("--weights", weights, "weights directory (default: output_dir)");
  eval->add_option("--out", out, "report directory (default: output_dir/report)");
  eval->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--shifts", shifts, "number of shifts")->check(CLI::PositiveNumber);

  auto* fc = app.add_subcommand("forecast-eval", "fit the demand forecaster and score the holdout");
  fc->add_option("--scenario", scenario, "scenario document (default scenario if omitted)");
  fc->add_option("--weeks", weeks, "weeks of history")->check(CLI::Range(2, 520));
  fc->add_option("--seed", seed, "history seed");
  fc->add_option("--out", out, "write the fitted model here");
  fc->add_option("--rounds", gbt.rounds, "boosting rounds")->check(CLI::PositiveNumber);
  fc->add_option("--depth", gbt.max_depth, "tree depth")->check(CLI::PositiveNumber);
  fc->add_option("--eta", gbt.eta, "learning rate");

  auto* snap = app.add_subcommand("snapshot", "render idle couriers and gaps at one minute as SVG");
  snap->add_option("--log", log_path, "event log CSV")->required();
  snap->add_option("--minute", minute, "shift minute")->required();
  snap->add_option("--scenario", scenario, "scenario document (default scenario if omitted)");
  snap->add_option("--out", out, "SVG path")->required();

  auto* rep = app.add_subcommand("report", "render an evaluation summary as Markdown");
  rep->add_option("--summary", summary, "summary.json from evaluate")->required();
  rep->add_option("--out", out, "Markdown path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_scenario(out, fleet, seed, cols, rows, rates, shift_start);
    if (*hist) return cmd_synth_history(scenario, weeks, seed, out);
    if (*train) return cmd_train(config, out);
    if (*sim) return cmd_simulate(config, variant, shift, weights, out, trace_dir);
    if (*eval) return cmd_evaluate(config, weights, out, workers, shifts);
    if (*fc) return cmd_forecast_eval(scenario, weeks, seed, out, gbt);
    if (*snap) return cmd_snapshot(log_path, minute, scenario, out);
    if (*rep) return cmd_report(summary, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
