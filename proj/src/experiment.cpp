#include "mealtwin/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mealtwin/errors.hpp"

namespace mealtwin {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::strategic: return "strategic";
    case Variant::strategic_steer: return "strategic_steer";
    case Variant::myopic: return "myopic";
    case Variant::myopic_steer: return "myopic_steer";
    case Variant::nearest_idle: return "nearest_idle";
    case Variant::nearest_idle_steer: return "nearest_idle_steer";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown framework variant '" + std::string(s) + "'");
}

bool uses_steering(Variant v) {
  return v == Variant::strategic_steer || v == Variant::myopic_steer ||
         v == Variant::nearest_idle_steer;
}

Mode variant_mode(Variant v) {
  return v == Variant::myopic || v == Variant::myopic_steer ? Mode::myopic : Mode::strategic;
}

std::vector<Mode> required_modes(Variant v) {
  if (v == Variant::nearest_idle) return {};
  return {variant_mode(v)};
}

// --- configuration ---------------------------------------------------------

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("experiment lists no variants");
  if (eval_shifts < 1) throw ConfigError("eval shifts must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (predictor != "gbt" && predictor != "oracle") {
    throw ConfigError("predictor must be 'gbt' or 'oracle'");
  }
  if (history_weeks < 2) throw ConfigError("history weeks must be >= 2");
  if (!scenario_path.empty() && !std::filesystem::exists(scenario_path)) {
    throw ConfigError("scenario file " + scenario_path + " does not exist");
  }
  plan.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> variants;
  for (Variant v : c.variants) variants.emplace_back(to_string(v));
  j = {{"schema", kExperimentSchema},
       {"scenario", c.scenario_path},
       {"scenario_seed", c.scenario_seed},
       {"variants", variants},
       {"plan", c.plan},
       {"eval", {{"shifts", c.eval_shifts}, {"seed", c.eval_seed}, {"workers", c.workers}}},
       {"output_dir", c.output_dir},
       {"trace", {{"dispatch", c.trace_dispatch}, {"steering", c.trace_steering}, {"logs", c.write_logs}}},
       {"forecast",
        {{"predictor", c.predictor}, {"history_weeks", c.history_weeks}, {"history_seed", c.history_seed}}}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  try {
    if (j.value("schema", std::string(kExperimentSchema)) != kExperimentSchema) {
      throw ConfigError("unsupported experiment schema '" + j.at("schema").get<std::string>() + "'");
    }
    c.scenario_path = j.value("scenario", c.scenario_path);
    c.scenario_seed = j.value("scenario_seed", c.scenario_seed);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) c.variants.push_back(parse_variant(v.get<std::string>()));
    }
    if (j.contains("plan")) c.plan = j.at("plan").get<TrainingPlan>();
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval_shifts = e.value("shifts", c.eval_shifts);
      c.eval_seed = e.value("seed", c.eval_seed);
      c.workers = e.value("workers", c.workers);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("trace")) {
      const auto& t = j.at("trace");
      c.trace_dispatch = t.value("dispatch", c.trace_dispatch);
      c.trace_steering = t.value("steering", c.trace_steering);
      c.write_logs = t.value("logs", c.write_logs);
    }
    if (j.contains("forecast")) {
      const auto& f = j.at("forecast");
      c.predictor = f.value("predictor", c.predictor);
      c.history_weeks = f.value("history_weeks", c.history_weeks);
      c.history_seed = f.value("history_seed", c.history_seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  auto c = j.get<ExperimentConfig>();
  // relative scenario paths resolve against the config's directory
  if (!c.scenario_path.empty() && std::filesystem::path(c.scenario_path).is_relative()) {
    c.scenario_path = (std::filesystem::path(path).parent_path() / c.scenario_path).string();
  }
  c.validate();
  return c;
}

// --- policies --------------------------------------------------------------

std::string policy_file(const std::string& kind, Mode m) {
  return kind + "_" + to_string(m) + ".json";
}

void PolicySet::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  auto dump = [&](const std::map<Mode, QNet>& nets, const std::string& kind) {
    for (const auto& [mode, net] : nets) {
      save_qnet((std::filesystem::path(dir) / policy_file(kind, mode)).string(), net,
                {{"kind", kind}, {"mode", to_string(mode)}, {"reward_scale", kRewardScale}});
    }
  };
  dump(dispatch_solo, "dispatch_solo");
  dump(steering, "steering");
  dump(dispatch_final, "dispatch_final");
}

PolicySet PolicySet::load(const std::string& dir) {
  PolicySet set;
  for (Mode m : {Mode::strategic, Mode::myopic}) {
    auto grab = [&](std::map<Mode, QNet>& nets, const std::string& kind) {
      const auto p = std::filesystem::path(dir) / policy_file(kind, m);
      if (std::filesystem::exists(p)) nets[m] = load_qnet(p.string());
    };
    grab(set.dispatch_solo, "dispatch_solo");
    grab(set.steering, "steering");
    grab(set.dispatch_final, "dispatch_final");
  }
  return set;
}

void PolicySet::require(Variant v) const {
  auto need = [&](const std::map<Mode, QNet>& nets, const std::string& kind, Mode m) {
    if (!nets.count(m)) {
      throw ConfigError(std::string("variant ") + to_string(v) + " needs weights file " +
                        policy_file(kind, m));
    }
  };
  switch (v) {
    case Variant::strategic:
    case Variant::myopic:
      need(dispatch_solo, "dispatch_solo", variant_mode(v));
      break;
    case Variant::strategic_steer:
    case Variant::myopic_steer:
      need(dispatch_final, "dispatch_final", variant_mode(v));
      need(steering, "steering", variant_mode(v));
      break;
    case Variant::nearest_idle_steer:
      need(steering, "steering", Mode::strategic);
      break;
    case Variant::nearest_idle:
      break;
  }
}

// --- running ---------------------------------------------------------------

ShiftResult run_shift(Variant v, const ScenarioConfig& scenario, const DemandPredictor* predictor,
                      const PolicySet& policies, SimSeeds seeds, const ShiftOptions& opts) {
  policies.require(v);
  const Mode mode = variant_mode(v);
  Simulator sim(scenario, predictor, mode, seeds, opts.log_events);
  ShiftResult out;

  std::optional<DdqnSteerer> steer;
  if (uses_steering(v)) {
    steer.emplace(policies.steering.at(mode));
    steer->set_trace(opts.trace);
  }
  SteeringController* steer_ptr = steer ? &*steer : nullptr;

  if (v == Variant::nearest_idle || v == Variant::nearest_idle_steer) {
    NearestIdleDispatcher d(opts.trace);
    sim.run(d, steer_ptr);
    out.dispatch = std::move(d.stats());
  } else {
    const QNet& net = uses_steering(v) ? policies.dispatch_final.at(mode) : policies.dispatch_solo.at(mode);
    DdqnDispatcher d(net);
    d.set_trace(opts.trace);
    d.set_timing(opts.timing);
    sim.run(d, steer_ptr);
    out.dispatch = std::move(d.stats());
  }
  if (steer) out.steering = std::move(steer->stats());
  out.log = sim.log();
  return out;
}

SimSeeds evaluation_seeds(std::uint64_t eval_seed, int shift) {
  const auto s = static_cast<std::uint64_t>(shift);
  return {derive_seed(eval_seed, {stream::kOrders, s}), derive_seed(eval_seed, {stream::kPolicy, s})};
}

std::vector<VariantRuns> evaluate_variants(
    const std::vector<Variant>& variants, const ScenarioConfig& scenario,
    const DemandPredictor* predictor, const PolicySet& policies, int shifts, std::uint64_t eval_seed,
    int workers, bool timing, const std::function<void(Variant, int, const ShiftResult&)>& on_shift) {
  for (Variant v : variants) policies.require(v);
  std::vector<VariantRuns> out;
  for (Variant v : variants) {
    VariantRuns r;
    r.variant = v;
    r.metrics.resize(static_cast<std::size_t>(shifts));
    out.push_back(std::move(r));
  }
  std::vector<std::vector<std::vector<double>>> latency(
      variants.size(), std::vector<std::vector<double>>(static_cast<std::size_t>(shifts)));

  const std::size_t jobs = variants.size() * static_cast<std::size_t>(shifts);
  std::atomic<std::size_t> next{0};
  std::mutex lock;
  std::exception_ptr failure;

  auto work = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= jobs) return;
      const std::size_t vi = job / static_cast<std::size_t>(shifts);
      const int shift = static_cast<int>(job % static_cast<std::size_t>(shifts));
      try {
        ShiftOptions opts;
        opts.timing = timing;
        auto res = run_shift(variants[vi], scenario, predictor, policies,
                             evaluation_seeds(eval_seed, shift), opts);
        out[vi].metrics[static_cast<std::size_t>(shift)] = compute_metrics(res.log, scenario.fleet_size);
        latency[vi][static_cast<std::size_t>(shift)] = std::move(res.dispatch.latency_sec);
        if (on_shift) {
          std::lock_guard<std::mutex> g(lock);
          on_shift(variants[vi], shift, res);
        }
      } catch (...) {
        std::lock_guard<std::mutex> g(lock);
        if (!failure) failure = std::current_exception();
        next.store(jobs);
        return;
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs)));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    for (auto& l : latency[vi]) out[vi].latency_sec.insert(out[vi].latency_sec.end(), l.begin(), l.end());
  }
  return out;
}

ComparisonReport build_report(const std::vector<VariantRuns>& runs) {
  std::vector<std::pair<std::string, std::vector<RunMetrics>>> in;
  for (const auto& r : runs) in.emplace_back(to_string(r.variant), r.metrics);
  return compare_frameworks(in);
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("percentile rank must lie in (0, 1]");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

// --- snapshots -------------------------------------------------------------

std::vector<int> GridSnapshot::gap() const {
  std::vector<int> g(idle.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = idle[i] - pending[i];
  return g;
}

GridSnapshot snapshot_at(const EventLog& log, int minute) {
  for (const auto& e : log.events()) {
    if (e.entity != "network" || e.event != "snapshot" || e.time != minute) continue;
    const auto d = parse_detail(e.detail);
    auto counts = [&](const char* key) {
      auto it = d.find(key);
      if (it == d.end()) throw DataError("snapshot without " + std::string(key));
      std::vector<int> out;
      std::istringstream in(it->second);
      int v;
      while (in >> v) out.push_back(v);
      return out;
    };
    GridSnapshot s;
    s.minute = minute;
    s.idle = counts("idle");
    s.pending = counts("pending");
    if (s.idle.size() != s.pending.size()) throw DataError("snapshot lists differ in length");
    return s;
  }
  throw DataError("log has no snapshot for minute " + std::to_string(minute));
}

int color_bin(int value, int max_abs) {
  if (value == 0 || max_abs <= 0) return 0;
  const int mag = std::min(3, (3 * std::abs(value) + max_abs - 1) / max_abs);
  return value < 0 ? -mag : mag;
}

const char* bin_color(int bin) {
  static const char* colors[] = {"#b2182b", "#ef8a62", "#fddbc7", "#f7f7f7",
                                 "#d1e5f0", "#67a9cf", "#2166ac"};
  return colors[std::clamp(bin, -3, 3) + 3];
}

namespace {

void hex_panel(std::ostringstream& out, const ServiceRegion& region, const std::vector<int>& values,
               const std::string& title, const std::string& id, double x0, double y0) {
  constexpr double size = 26.0;
  const double w = std::sqrt(3.0) * size;
  int max_abs = 1;
  for (int v : values) max_abs = std::max(max_abs, std::abs(v));
  out << "<g id=\"" << id << "\" class=\"panel\">\n";
  out << "<text x=\"" << x0 << "\" y=\"" << y0 - 12 << "\" font-size=\"14\">" << title << "</text>\n";
  for (const auto& cell : region.cells()) {
    const double cx = x0 + w * (cell.coord.q + cell.coord.r / 2.0) + w;
    const double cy = y0 + 1.5 * size * cell.coord.r + size;
    const int v = values[static_cast<std::size_t>(cell.id)];
    const int bin = color_bin(v, max_abs);
    out << "<polygon data-grid=\"" << cell.id << "\" data-value=\"" << v << "\" data-bin=\"" << bin
        << "\" fill=\"" << bin_color(bin) << "\" stroke=\"#444\" points=\"";
    for (int k = 0; k < 6; ++k) {
      const double ang = (60.0 * k - 30.0) * 3.14159265358979323846 / 180.0;
      out << format_number(std::round((cx + size * std::cos(ang)) * 100) / 100) << ','
          << format_number(std::round((cy + size * std::sin(ang)) * 100) / 100) << (k < 5 ? " " : "");
    }
    out << "\"/>\n";
    out << "<text x=\"" << format_number(std::round(cx * 100) / 100) << "\" y=\""
        << format_number(std::round(cy * 100) / 100 + 4) << "\" font-size=\"10\" text-anchor=\"middle\">"
        << cell.id << (cell.is_restaurant ? "*" : "") << ": " << v << "</text>\n";
  }
  out << "</g>\n";
}

}  // namespace

std::string render_snapshot_svg(const ServiceRegion& region, const GridSnapshot& snap) {
  if (snap.idle.size() != region.size()) throw DataError("snapshot does not match the region size");
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"340\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  hex_panel(out, region, snap.idle, "idle couriers, minute " + std::to_string(snap.minute), "idle", 20, 40);
  hex_panel(out, region, snap.gap(), "current supply-demand gap, minute " + std::to_string(snap.minute),
            "gap", 390, 40);
  out << "</svg>\n";
  return out.str();
}

}  // namespace mealtwin
