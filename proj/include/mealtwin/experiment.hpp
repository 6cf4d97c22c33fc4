#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mealtwin/dispatch.hpp"
#include "mealtwin/eval.hpp"
#include "mealtwin/forecast.hpp"
#include "mealtwin/steering.hpp"
#include "mealtwin/trainer.hpp"

namespace mealtwin {

inline constexpr const char* kExperimentSchema = "mealtwin.experiment/1";

enum class Variant { strategic, strategic_steer, myopic, myopic_steer, nearest_idle, nearest_idle_steer };

inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::strategic,    Variant::strategic_steer,   Variant::myopic,
    Variant::myopic_steer, Variant::nearest_idle, Variant::nearest_idle_steer};

const char* to_string(Variant v);
Variant parse_variant(std::string_view s);
bool uses_steering(Variant v);
/// Mode the simulator runs in (nearest-idle runs use the strategic horizon
/// so that its steering sees anticipated gaps).
Mode variant_mode(Variant v);
/// Modes whose trained policies the variant needs; empty for nearest_idle.
std::vector<Mode> required_modes(Variant v);

struct ExperimentConfig {
  std::string scenario_path;  // empty = default scenario
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  TrainingPlan plan;
  int eval_shifts = 100;
  std::uint64_t eval_seed = 7;
  int workers = 1;
  std::string output_dir = "out";
  bool trace_dispatch = false;
  bool trace_steering = false;
  bool write_logs = false;
  // demand model
  std::string predictor = "gbt";  // gbt | oracle
  int history_weeks = 26;
  std::uint64_t history_seed = 11;
  std::uint64_t scenario_seed = 2024;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment(const std::string& path);

/// Trained weights for both modes; missing entries are absent.
struct PolicySet {
  std::map<Mode, QNet> dispatch_solo;
  std::map<Mode, QNet> steering;
  std::map<Mode, QNet> dispatch_final;

  void save(const std::string& dir) const;
  /// Loads whatever files exist in `dir`.
  static PolicySet load(const std::string& dir);
  /// Throws ConfigError when a policy needed by `v` is absent.
  void require(Variant v) const;
};

std::string policy_file(const std::string& kind, Mode m);

struct ShiftOptions {
  bool log_events = true;
  bool trace = false;
  bool timing = false;
};

struct ShiftResult {
  EventLog log;
  DispatchStats dispatch;
  SteerStats steering;
};

ShiftResult run_shift(Variant v, const ScenarioConfig& scenario, const DemandPredictor* predictor,
                      const PolicySet& policies, SimSeeds seeds, const ShiftOptions& opts = {});

/// Matched seeds for evaluation shift `i`: identical across variants.
SimSeeds evaluation_seeds(std::uint64_t eval_seed, int shift);

struct VariantRuns {
  Variant variant;
  std::vector<RunMetrics> metrics;
  std::vector<double> latency_sec;  // all timed decisions
};

/// Runs `shifts` matched shifts per variant over a pool of `workers` threads.
/// `on_shift` (optional) receives every finished shift in completion order,
/// serialized under a lock.
std::vector<VariantRuns> evaluate_variants(
    const std::vector<Variant>& variants, const ScenarioConfig& scenario,
    const DemandPredictor* predictor, const PolicySet& policies, int shifts, std::uint64_t eval_seed,
    int workers, bool timing = false,
    const std::function<void(Variant, int, const ShiftResult&)>& on_shift = {});

ComparisonReport build_report(const std::vector<VariantRuns>& runs);

/// Nearest-rank percentile (q in (0,1]).
double percentile(std::vector<double> v, double q);

// --- snapshot rendering ----------------------------------------------------

struct GridSnapshot {
  int minute = 0;
  std::vector<int> idle;
  std::vector<int> pending;
  std::vector<int> gap() const;
};

/// Snapshot logged at the start of `minute`; DataError when absent.
GridSnapshot snapshot_at(const EventLog& log, int minute);

/// Colour bin of a value on the diverging scale: -3 .. +3, 0 neutral.
int color_bin(int value, int max_abs);
const char* bin_color(int bin);

/// Two hex panels (idle couriers, current gap) as a standalone SVG document.
std::string render_snapshot_svg(const ServiceRegion& region, const GridSnapshot& snap);

}  // namespace mealtwin
