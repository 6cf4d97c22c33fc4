#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mealtwin/simcore.hpp"

namespace mealtwin {

double mean(std::span<const double> v);
/// Population standard deviation (0 for fewer than two values).
double pstdev(std::span<const double> v);
/// Sample standard deviation (0 for fewer than two values).
double stdev(std::span<const double> v);

struct RunMetrics {
  std::vector<double> time_gaps;         // arrival − actual ready, delivered orders
  std::vector<double> pickup_distances;  // assigned orders
  int sampled = 0;
  int delivered = 0;
  int overdue = 0;
  double overdue_rate = 0.0;
  double nsd = 0.0;
  double psd = 0.0;
  int snapshots = 0;

  // per courier, indexed by id
  std::vector<double> delivery_minutes;
  std::vector<double> idle_minutes;
  std::vector<double> reallocation_minutes;
  std::vector<double> orders_served;
  std::vector<double> distance_travelled;

  double gap_mean() const { return mean(time_gaps); }
  double gap_std() const { return pstdev(time_gaps); }
  double pickup_mean() const { return mean(pickup_distances); }
  double pickup_std() const { return pstdev(pickup_distances); }
};

/// Rebuilds the shift metrics from its event log.
RunMetrics compute_metrics(const EventLog& log, int fleet_size);

/// Parses "k=v;k=v" detail text.
std::map<std::string, std::string> parse_detail(const std::string& detail);

struct OutlierResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> excluded;
  double cutoff = 0.0;
  bool applied = false;  // false when fewer than 20 runs
};

/// Drops runs whose mean time gap lies strictly above the nearest-rank
/// 95th percentile of the set.
OutlierResult exclude_outliers(std::span<const double> run_gap_means);

struct MannWhitney {
  double u = 0.0;  // U of the first sample
  double z = 0.0;
  double p = 1.0;  // two-sided
};

/// Rank-sum test with midranks, tie-corrected normal approximation and
/// continuity correction.
MannWhitney mann_whitney_u(std::span<const double> x, std::span<const double> y);

/// Scalar per-run summaries compared across variants.
struct MetricDef {
  std::string name;
  std::string family;
  double (*extract)(const RunMetrics&);
};
const std::vector<MetricDef>& metric_defs();

struct VariantSummary {
  std::string variant;
  std::size_t runs = 0;
  std::vector<std::size_t> excluded;
  std::map<std::string, double> avg;     // mean over kept runs of the per-run value
  std::map<std::string, double> std;     // across-run sample std of the same
  std::map<std::string, double> pooled;  // pooled over orders / couriers of kept runs
};

struct PairTest {
  std::string metric;
  std::string a;
  std::string b;
  MannWhitney test;
};

struct ComparisonReport {
  std::vector<VariantSummary> variants;
  std::vector<PairTest> tests;
  std::vector<std::string> missing;  // variants without runs
};

ComparisonReport compare_frameworks(
    const std::vector<std::pair<std::string, std::vector<RunMetrics>>>& runs);

void to_json(nlohmann::json& j, const ComparisonReport& r);
void from_json(const nlohmann::json& j, ComparisonReport& r);

/// One CSV per metric family plus pvalues.csv and summary.json.
void write_report(const std::string& dir, const ComparisonReport& r);
/// Markdown tables, one per family.
std::string render_markdown(const ComparisonReport& r);

}  // namespace mealtwin
