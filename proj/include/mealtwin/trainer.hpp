#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mealtwin/dispatch.hpp"
#include "mealtwin/rlcore.hpp"
#include "mealtwin/simcore.hpp"

namespace mealtwin {

struct TrainingPlan {
  int r1 = 200;
  int r2 = 150;
  int r3 = 100;
  DdqnParams dispatch;
  DdqnParams steering;
  Activation dispatch_output = Activation::linear;
  int hidden = 32;
  RewardWeights rewards;
  int window = 20;
  double threshold = 0.05;
  int extend_block = 25;
  bool extend = true;
  double finetune_eps_scale = 0.25;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingPlan& p);
void from_json(const nlohmann::json& j, TrainingPlan& p);

struct PhaseReport {
  std::string name;
  std::vector<double> returns;  // one per episode
  std::int64_t learn_updates = 0;
  double final_epsilon = 0.0;
  bool assessed = false;  // enough episodes for the convergence check
  bool converged = false;
  std::vector<std::uint64_t> dispatch_hash;  // after each episode
  std::vector<std::uint64_t> steering_hash;
};

struct TrainingReport {
  Mode mode = Mode::strategic;
  std::array<PhaseReport, 3> phases;
  double wall_seconds = 0.0;
  std::vector<std::string> weight_files;
};

void to_json(nlohmann::json& j, const TrainingReport& r);

struct TrainedPolicies {
  QNet dispatch_solo;   // after phase 1, for runs without steering
  QNet steering;        // after phase 2
  QNet dispatch_final;  // after phase 3, paired with `steering`
  TrainingReport report;
};

/// |mean(last window) − mean(previous window)| ≤ threshold · |mean(previous window)|.
/// The series must hold at least two windows.
bool convergence_check(std::span<const double> series, int window, double threshold);

/// Dispatch alone, then steering over frozen dispatch, then dispatch
/// fine-tuning over frozen steering.
TrainedPolicies sandwich_train(const TrainingPlan& plan, const ScenarioConfig& scenario,
                               const DemandPredictor* predictor, Mode mode);

/// Episode seeds used by training; evaluation draws from a different base.
SimSeeds training_seeds(std::uint64_t plan_seed, int phase, int episode);

}  // namespace mealtwin
