#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mealtwin/forecast.hpp"
#include "mealtwin/hexgrid.hpp"
#include "mealtwin/rng.hpp"
#include "mealtwin/scenario.hpp"

namespace mealtwin {

enum class CourierStatus { idle, to_pickup, waiting_at_restaurant, to_delivery, reallocating };
enum class Mode { strategic, myopic };
enum class Horizon { current, anticipated };

const char* to_string(CourierStatus s);
const char* to_string(Mode m);
Mode parse_mode(std::string_view s);

/// Legal status transitions of the courier state machine.
bool is_legal_transition(CourierStatus from, CourierStatus to);

struct Task {
  enum class Kind { delivery, reallocate };
  Kind kind = Kind::delivery;
  int order_id = -1;  // delivery only
  GridId target = 0;  // reallocate only
  int created_at = 0;
};

struct Courier {
  int id = 0;
  CourierStatus status = CourierStatus::idle;
  GridId grid = 0;        // where the courier is, or the origin of the current leg
  GridId leg_target = 0;  // end grid of the current leg
  double leg_start = 0.0;
  double leg_end = 0.0;
  std::deque<Task> tasks;  // head is the active task unless idle
  std::optional<double> idle_since;
  double status_since = 0.0;

  double delivery_minutes = 0.0;
  double idle_minutes = 0.0;
  double reallocation_minutes = 0.0;
  double distance_travelled = 0.0;
  int orders_served = 0;

  int delivery_task_count() const;
  bool has_reallocation() const;
};

// Future idle location and expected minutes until then.
struct CourierEta {
  GridId grid = 0;
  double minutes = 0.0;
};

struct Event {
  double time = 0.0;
  std::string entity;
  std::string event;
  std::string detail;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Append-only record of everything that happened in one shift.
class EventLog {
 public:
  void add(double time, std::string entity, std::string event, std::string detail = {});
  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  void write_csv(std::ostream& out) const;
  static EventLog read_csv(std::istream& in);

 private:
  std::vector<Event> events_;
};

/// Shortest decimal text that round-trips to the same double.
std::string format_number(double v);

// Outcome of an assignment, fixed at decision time.
struct AssignmentInfo {
  CourierEta eta;              // courier's future idle grid before the assignment
  int pickup_distance = 0;     // d(g^c, g^r_o)
  double expected_arrival = 0.0;  // clock + eta + 3 d
  int courier_gap = 0;         // gap at the future idle grid, in the current mode
};

class Simulator;

// Decides every pending order of the current minute; mutates the simulator
// through apply_dispatch / apply_postpone between decisions.
class DispatchController {
 public:
  virtual ~DispatchController() = default;
  virtual void run_phase(Simulator& sim) = 0;
};

// Decides every steering-eligible courier of the current minute.
class SteeringController {
 public:
  virtual ~SteeringController() = default;
  virtual void run_phase(Simulator& sim) = 0;
};

struct SimSeeds {
  std::uint64_t shift = 0;   // order stream, warm-up, initial fleet
  std::uint64_t policy = 0;  // exploration and tie-breaks
};

class Simulator {
 public:
  /// `predictor` may be null (all predictions 0). The config and predictor
  /// must outlive the simulator.
  Simulator(const ScenarioConfig& config, const DemandPredictor* predictor, Mode mode,
            SimSeeds seeds, bool log_events = true);

  /// One minute: sample orders, refresh predictions, dispatch phase, steering
  /// phase (when a controller is given), advance timers.
  void step(DispatchController& dispatch, SteeringController* steering);
  void run(DispatchController& dispatch, SteeringController* steering);
  bool done() const { return clock_ >= config_.shift_minutes; }

  int clock() const { return clock_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }
  const ScenarioConfig& config() const { return config_; }
  const ServiceRegion& region() const { return config_.region; }
  const std::vector<Courier>& couriers() const { return couriers_; }
  const Courier& courier(int id) const { return couriers_.at(static_cast<std::size_t>(id)); }
  const std::vector<Order>& orders() const { return orders_; }
  const Order& order(int id) const { return orders_.at(static_cast<std::size_t>(id)); }
  const EventLog& log() const { return log_; }
  double predicted_demand(GridId g) const { return predictions_.at(static_cast<std::size_t>(g)); }
  const std::vector<double>& predictions() const { return predictions_; }

  Rng& policy_rng() { return policy_rng_; }
  Rng& tiebreak_rng() { return tiebreak_rng_; }

  /// Pending orders by remaining expected prep time, then id.
  std::vector<int> pending_orders_ranked() const;
  std::vector<int> pending_orders() const;

  CourierEta courier_eta_idle(int courier_id) const;

  /// Integer supply-demand gap of `grid` (see Horizon).
  int supply_demand_gap(GridId grid, Horizon h) const;
  /// Gap of every grid, indexed by id.
  std::vector<int> gap_field(Horizon h) const;
  Horizon horizon() const { return mode_ == Mode::strategic ? Horizon::anticipated : Horizon::current; }

  bool dispatch_eligible(int courier_id) const;
  std::vector<int> steering_eligible() const;

  /// True when postponing `order_id` now would expire it (actual ready time
  /// more than the overdue limit in the past).
  bool postpone_expires(int order_id) const;

  AssignmentInfo apply_dispatch(int order_id, int courier_id);
  /// Returns true when the order was removed as overdue.
  bool apply_postpone(int order_id);
  void apply_reallocation(int courier_id, GridId target);

  /// Grid on the deterministic path at `time` (floor(progress / 3)).
  GridId position_at(int courier_id, double time) const;

  /// Test hooks: place an order / set a courier location directly.
  int inject_order(GridId restaurant, GridId household, double est_prep, double actual_prep);
  void place_courier(int courier_id, GridId grid);

  struct Counts {
    int sampled = 0;
    int delivered = 0;
    int overdue = 0;
    int active = 0;
  };
  Counts order_counts() const;

 private:
  void sample_new_orders();
  void add_order(Order o);
  void refresh_predictions();
  void log_snapshot();
  void advance_all(double until);
  void advance_courier(Courier& c, double until);
  void start_next_task(Courier& c, double t);
  void start_leg(Courier& c, GridId from, GridId to, double t);
  void pickup(Courier& c, Order& o, double t);
  void set_status(Courier& c, CourierStatus s, double t);
  void finish_shift();
  std::string courier_entity(const Courier& c) const;

  const ScenarioConfig& config_;
  const DemandPredictor* predictor_;
  Mode mode_;
  bool log_events_;
  int clock_ = 0;
  int next_order_id_ = 0;
  std::vector<Courier> couriers_;
  std::vector<Order> orders_;
  std::vector<int> pending_;
  std::vector<double> predictions_;
  ArrivalCounter arrivals_;
  EventLog log_;
  Rng order_rng_;
  Rng policy_rng_;
  Rng tiebreak_rng_;
};

}  // namespace mealtwin
