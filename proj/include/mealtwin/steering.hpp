#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "mealtwin/rlcore.hpp"
#include "mealtwin/simcore.hpp"

namespace mealtwin {

inline constexpr int kSteerSlots = 7;  // self + 6 neighbors

/// Sum of the gaps over the grid's neighborhood (itself included).
double local_score(const ServiceRegion& region, std::span<const int> gap, GridId grid);
double local_score(const Simulator& sim, GridId grid, Horizon h);

struct SteerEncoding {
  std::vector<double> state;  // (gap, score) per slot; absent slots zero
  Mask mask;                  // 7 entries; slot 0 (stay) always valid
  std::array<std::optional<GridId>, kSteerSlots> slots;
};

SteerEncoding encode_steer_state(const ServiceRegion& region, std::span<const int> gap, GridId grid);
/// Courier must be steering-eligible.
SteerEncoding encode_steer_state(const Simulator& sim, int courier_id);

/// Gap field after one unit of supply moves from `from` to `to`.
std::vector<int> shifted_gaps(std::span<const int> gap, GridId from, GridId to);

/// 0 for a stay; otherwise the gap difference plus the mean change of the
/// neighborhood scores around `from`.
double reward_reallocate(const ServiceRegion& region, std::span<const int> gap, GridId from,
                         std::optional<GridId> to);

struct SteerTraceRow {
  int minute = 0;
  int courier = 0;
  GridId from = 0;
  GridId to = 0;
  double reward = 0.0;
};

struct SteerStats {
  double episode_return = 0.0;
  int decisions = 0;
  int moves = 0;
  std::vector<SteerTraceRow> trace;
};

class DdqnSteerer final : public SteeringController {
 public:
  explicit DdqnSteerer(DdqnAgent& learner);
  explicit DdqnSteerer(const QNet& frozen);

  void run_phase(Simulator& sim) override;
  void set_trace(bool on) { trace_ = on; }
  SteerStats& stats() { return stats_; }

 private:
  const QNet& net() const;

  DdqnAgent* learner_ = nullptr;
  const QNet* frozen_ = nullptr;
  bool trace_ = false;
  SteerStats stats_;
};

void write_steer_trace(std::ostream& out, const std::vector<SteerTraceRow>& rows);

}  // namespace mealtwin
