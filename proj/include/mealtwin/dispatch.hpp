#pragma once

#include <vector>

#include "mealtwin/rlcore.hpp"
#include "mealtwin/simcore.hpp"

namespace mealtwin {

struct RewardWeights {
  double base = 100.0;
  double late = -5.0;      // per minute the courier arrives after the meal is ready
  double early = -1.0;     // per minute the courier arrives before
  double distance = -3.0;  // per pickup unit
  double balance = 5.0;    // times +1 / -1 for the courier's gap sign
  double postpone = -10.0;
  double overdue = -100.0;
};

/// Raw rewards are divided by this before entering the replay buffer.
inline constexpr double kRewardScale = 100.0;

struct DispatchEncoding {
  std::vector<double> state;  // [Δt^r, (Δt, d, SD) × fleet]
  Mask mask;                  // fleet + 1 entries, postpone last
};

DispatchEncoding encode_state(const Simulator& sim, int order_id);

/// Validity of each courier plus postpone.
Mask dispatch_mask(const Simulator& sim);

/// `time_gap` = courier arrival − actual ready time.
double reward_assign(double time_gap, int pickup_distance, int courier_gap,
                     const RewardWeights& w = {});

struct PostponeOutcome {
  double reward = 0.0;
  bool removed = false;
};

/// Evaluated before the postpone is applied.
PostponeOutcome reward_postpone(const Simulator& sim, int order_id, const RewardWeights& w = {});

/// Every courier's Δt ticked down one minute (floored at 0).
std::vector<double> dummy_next_state(const std::vector<double>& s);
/// Order and courier timers ticked down one minute.
std::vector<double> postponed_next_state(const std::vector<double>& s);

/// Closest currently idle courier, random tie-break; fleet size = postpone.
int nearest_idle_policy(Simulator& sim, int order_id);

struct DispatchTraceRow {
  int minute = 0;
  int order = 0;
  int action = 0;
  double reward = 0.0;
  double q_max = 0.0;
};

/// Reward bookkeeping shared by the dispatch controllers.
struct DispatchStats {
  double episode_return = 0.0;  // raw rewards
  int decisions = 0;
  std::vector<double> latency_sec;  // per decision, when timing is enabled
  std::vector<DispatchTraceRow> trace;
};

class NearestIdleDispatcher final : public DispatchController {
 public:
  explicit NearestIdleDispatcher(bool trace = false, RewardWeights w = {}) : trace_(trace), w_(w) {}
  void run_phase(Simulator& sim) override;
  DispatchStats& stats() { return stats_; }

 private:
  bool trace_;
  RewardWeights w_;
  DispatchStats stats_;
};

/// Conv-DDQN dispatcher. With an agent it explores and records transitions;
/// with a frozen net it acts greedily.
class DdqnDispatcher final : public DispatchController {
 public:
  explicit DdqnDispatcher(DdqnAgent& learner, RewardWeights w = {});
  explicit DdqnDispatcher(const QNet& frozen, RewardWeights w = {});

  void run_phase(Simulator& sim) override;
  void set_trace(bool on) { trace_ = on; }
  void set_timing(bool on) { timing_ = on; }
  DispatchStats& stats() { return stats_; }

 private:
  const QNet& net() const;

  DdqnAgent* learner_ = nullptr;
  const QNet* frozen_ = nullptr;
  RewardWeights w_;
  bool trace_ = false;
  bool timing_ = false;
  DispatchStats stats_;
};

void write_dispatch_trace(std::ostream& out, const std::vector<DispatchTraceRow>& rows);

}  // namespace mealtwin
