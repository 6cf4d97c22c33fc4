#include "mealtwin/simcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "mealtwin/errors.hpp"

namespace mealtwin {

const char* to_string(CourierStatus s) {
  switch (s) {
    case CourierStatus::idle: return "idle";
    case CourierStatus::to_pickup: return "to_pickup";
    case CourierStatus::waiting_at_restaurant: return "waiting_at_restaurant";
    case CourierStatus::to_delivery: return "to_delivery";
    case CourierStatus::reallocating: return "reallocating";
  }
  return "?";
}

const char* to_string(Mode m) { return m == Mode::strategic ? "strategic" : "myopic"; }

Mode parse_mode(std::string_view s) {
  if (s == "strategic") return Mode::strategic;
  if (s == "myopic") return Mode::myopic;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

bool is_legal_transition(CourierStatus from, CourierStatus to) {
  using S = CourierStatus;
  switch (from) {
    case S::idle: return to == S::to_pickup || to == S::reallocating;
    case S::to_pickup: return to == S::waiting_at_restaurant || to == S::to_delivery;
    case S::waiting_at_restaurant: return to == S::to_delivery;
    case S::to_delivery: return to == S::idle || to == S::to_pickup;
    case S::reallocating: return to == S::idle || to == S::to_pickup;
  }
  return false;
}

int Courier::delivery_task_count() const {
  return static_cast<int>(std::count_if(tasks.begin(), tasks.end(), [](const Task& t) {
    return t.kind == Task::Kind::delivery;
  }));
}

bool Courier::has_reallocation() const {
  return std::any_of(tasks.begin(), tasks.end(),
                     [](const Task& t) { return t.kind == Task::Kind::reallocate; });
}

// --- event log -------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void EventLog::add(double time, std::string entity, std::string event, std::string detail) {
  events_.push_back({time, std::move(entity), std::move(event), std::move(detail)});
}

void EventLog::write_csv(std::ostream& out) const {
  out << "minute,entity,event,detail\n";
  for (const auto& e : events_) {
    out << format_number(e.time) << ',' << e.entity << ',' << e.event << ',' << e.detail << '\n';
  }
}

EventLog EventLog::read_csv(std::istream& in) {
  EventLog log;
  std::string line;
  if (!std::getline(in, line)) throw DataError("event log is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "minute,entity,event,detail") throw DataError("unexpected event log header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    const auto c3 = c2 == std::string::npos ? c2 : line.find(',', c2 + 1);
    if (c3 == std::string::npos) {
      throw DataError("malformed event log row at line " + std::to_string(lineno));
    }
    double t = 0.0;
    const auto res = std::from_chars(line.data(), line.data() + c1, t);
    if (res.ec != std::errc{} || res.ptr != line.data() + c1) {
      throw DataError("bad minute value at line " + std::to_string(lineno));
    }
    log.add(t, line.substr(c1 + 1, c2 - c1 - 1), line.substr(c2 + 1, c3 - c2 - 1),
            line.substr(c3 + 1));
  }
  return log;
}

// --- simulator -------------------------------------------------------------

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

Simulator::Simulator(const ScenarioConfig& config, const DemandPredictor* predictor, Mode mode,
                     SimSeeds seeds, bool log_events)
    : config_(config),
      predictor_(predictor),
      mode_(mode),
      log_events_(log_events),
      predictions_(config.region.size(), 0.0),
      arrivals_(-60),
      order_rng_(derive_seed(seeds.shift, {stream::kOrders})),
      policy_rng_(derive_seed(seeds.policy, {stream::kPolicy})),
      tiebreak_rng_(derive_seed(seeds.policy, {stream::kTieBreak})) {
  config_.validate();

  Rng fleet_rng(derive_seed(seeds.shift, {stream::kFleet}));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(config_.region.size()) - 1);
  couriers_.resize(static_cast<std::size_t>(config_.fleet_size));
  for (int i = 0; i < config_.fleet_size; ++i) {
    auto& c = couriers_[static_cast<std::size_t>(i)];
    c.id = i;
    c.grid = pick(fleet_rng);
    c.leg_target = c.grid;
    c.idle_since = 0.0;
    if (log_events_) log_.add(0.0, courier_entity(c), "init", "grid=" + std::to_string(c.grid));
  }

  // Lag warm-up: the hour before the shift, sampled from the generator.
  Rng warm_rng(derive_seed(seeds.shift, {stream::kWarmup}));
  int warm_hour = config_.shift_start_hour - 1;
  for (GridId g : config_.region.restaurant_grids()) {
    if (!config_.has_rate(g, warm_hour)) {
      warm_hour = config_.shift_start_hour;
      break;
    }
  }
  for (int m = -60; m < 0; ++m) {
    for (const auto& [rest, house] : sample_arrivals(config_, warm_hour, warm_rng)) {
      arrivals_.add(rest, m);
    }
  }
}

std::string Simulator::courier_entity(const Courier& c) const {
  return "courier:" + std::to_string(c.id);
}

void Simulator::run(DispatchController& dispatch, SteeringController* steering) {
  while (!done()) step(dispatch, steering);
}

void Simulator::step(DispatchController& dispatch, SteeringController* steering) {
  if (done()) throw std::logic_error("step called after the shift ended");
  sample_new_orders();
  refresh_predictions();
  log_snapshot();
  dispatch.run_phase(*this);
  if (steering != nullptr) steering->run_phase(*this);
  advance_all(static_cast<double>(clock_ + 1));
  ++clock_;
  if (done()) finish_shift();
}

void Simulator::add_order(Order o) {
  arrivals_.add(o.restaurant, o.placed_at);
  pending_.push_back(o.id);
  if (log_events_) {
    log_.add(o.placed_at, "order:" + std::to_string(o.id), "placed",
             "restaurant=" + std::to_string(o.restaurant) +
                 ";household=" + std::to_string(o.household) +
                 ";est_prep=" + format_number(o.est_prep) +
                 ";actual_prep=" + format_number(o.actual_prep));
  }
  orders_.push_back(std::move(o));
}

void Simulator::sample_new_orders() {
  for (auto& o : sample_orders(config_, clock_, order_rng_, next_order_id_)) add_order(std::move(o));
}

int Simulator::inject_order(GridId restaurant, GridId household, double est_prep,
                            double actual_prep) {
  if (!region().contains(restaurant) || !region().contains(household)) {
    throw std::invalid_argument("inject_order: grid outside region");
  }
  Order o;
  o.id = next_order_id_++;
  o.placed_at = clock_;
  o.restaurant = restaurant;
  o.household = household;
  o.est_prep = est_prep;
  o.actual_prep = actual_prep;
  add_order(o);
  return o.id;
}

void Simulator::place_courier(int courier_id, GridId grid) {
  auto& c = couriers_.at(static_cast<std::size_t>(courier_id));
  if (c.status != CourierStatus::idle) throw std::logic_error("place_courier: courier is busy");
  if (!region().contains(grid)) throw std::invalid_argument("place_courier: grid outside region");
  c.grid = grid;
  c.leg_target = grid;
}

void Simulator::refresh_predictions() {
  std::fill(predictions_.begin(), predictions_.end(), 0.0);
  if (predictor_ == nullptr) return;
  const int hour = config_.hour_of(clock_);
  for (GridId g : region().restaurant_grids()) {
    const auto f = build_features(arrivals_, g, clock_, config_.day_of_week, hour);
    predictions_[static_cast<std::size_t>(g)] = predictor_->predict(g, f, clock_);
  }
}

void Simulator::log_snapshot() {
  if (!log_events_) return;
  std::vector<int> idle(region().size(), 0), pending(region().size(), 0);
  for (const auto& c : couriers_) {
    if (c.status == CourierStatus::idle) ++idle[static_cast<std::size_t>(c.grid)];
  }
  for (int id : pending_) ++pending[static_cast<std::size_t>(order(id).restaurant)];
  std::string detail = "idle=";
  for (std::size_t g = 0; g < idle.size(); ++g) {
    if (g) detail += ' ';
    detail += std::to_string(idle[g]);
  }
  detail += ";pending=";
  for (std::size_t g = 0; g < pending.size(); ++g) {
    if (g) detail += ' ';
    detail += std::to_string(pending[g]);
  }
  log_.add(clock_, "network", "snapshot", std::move(detail));
}

std::vector<int> Simulator::pending_orders() const { return pending_; }

std::vector<int> Simulator::pending_orders_ranked() const {
  std::vector<int> out = pending_;
  std::sort(out.begin(), out.end(), [&](int a, int b) {
    const double ra = order(a).est_ready() - clock_;
    const double rb = order(b).est_ready() - clock_;
    if (ra != rb) return ra < rb;
    return a < b;
  });
  return out;
}

CourierEta Simulator::courier_eta_idle(int courier_id) const {
  const auto& c = courier(courier_id);
  if (c.status == CourierStatus::idle) return {c.grid, 0.0};

  const auto& reg = region();
  double t = clock_;
  GridId g = c.grid;
  auto finish_delivery = [&](const Order& o, double arrive) {
    const double pickup = std::max(arrive, o.est_ready());
    t = pickup + reg.travel_minutes(o.restaurant, o.household);
    g = o.household;
  };

  const Task& head = c.tasks.front();
  switch (c.status) {
    case CourierStatus::to_pickup:
      finish_delivery(order(head.order_id), c.leg_end);
      break;
    case CourierStatus::waiting_at_restaurant:
      finish_delivery(order(head.order_id), static_cast<double>(clock_));
      break;
    case CourierStatus::to_delivery:
      t = c.leg_end;
      g = order(head.order_id).household;
      break;
    case CourierStatus::reallocating:
      t = c.leg_end;
      g = head.target;
      break;
    case CourierStatus::idle:
      break;
  }
  for (std::size_t i = 1; i < c.tasks.size(); ++i) {
    const Task& task = c.tasks[i];
    if (task.kind != Task::Kind::delivery) continue;
    const Order& o = order(task.order_id);
    finish_delivery(o, t + reg.travel_minutes(g, o.restaurant));
  }
  return {g, std::max(0.0, t - clock_)};
}

std::vector<int> Simulator::gap_field(Horizon h) const {
  std::vector<int> gap(region().size(), 0);
  if (h == Horizon::current) {
    for (const auto& c : couriers_) {
      if (c.status == CourierStatus::idle) ++gap[static_cast<std::size_t>(c.grid)];
    }
    for (int id : pending_) --gap[static_cast<std::size_t>(order(id).restaurant)];
    return gap;
  }
  for (const auto& c : couriers_) {
    const auto eta = courier_eta_idle(c.id);
    if (eta.minutes <= kForecastWindow) ++gap[static_cast<std::size_t>(eta.grid)];
  }
  for (std::size_t g = 0; g < gap.size(); ++g) gap[g] -= round_half_up(predictions_[g]);
  return gap;
}

int Simulator::supply_demand_gap(GridId grid, Horizon h) const {
  if (!region().contains(grid)) throw std::domain_error("supply_demand_gap: grid outside region");
  return gap_field(h)[static_cast<std::size_t>(grid)];
}

bool Simulator::dispatch_eligible(int courier_id) const {
  return courier(courier_id).delivery_task_count() < config_.max_delivery_tasks;
}

std::vector<int> Simulator::steering_eligible() const {
  std::vector<int> out;
  for (const auto& c : couriers_) {
    if (c.status == CourierStatus::idle && c.idle_since &&
        clock_ - *c.idle_since > config_.idle_threshold_min) {
      out.push_back(c.id);
    }
  }
  return out;
}

bool Simulator::postpone_expires(int order_id) const {
  return clock_ - order(order_id).ready_time() > config_.overdue_limit_min;
}

AssignmentInfo Simulator::apply_dispatch(int order_id, int courier_id) {
  auto& o = orders_.at(static_cast<std::size_t>(order_id));
  auto& c = couriers_.at(static_cast<std::size_t>(courier_id));
  if (o.status != OrderStatus::pending) throw std::logic_error("apply_dispatch: order not pending");
  if (!dispatch_eligible(courier_id)) {
    throw std::logic_error("apply_dispatch: courier already holds the maximum delivery tasks");
  }
  AssignmentInfo info;
  info.eta = courier_eta_idle(courier_id);
  info.pickup_distance = region().distance(info.eta.grid, o.restaurant);
  info.expected_arrival = clock_ + info.eta.minutes + kMinutesPerUnit * info.pickup_distance;
  info.courier_gap = supply_demand_gap(info.eta.grid, horizon());

  o.status = OrderStatus::assigned;
  o.courier = courier_id;
  o.assigned_at = clock_;
  pending_.erase(std::find(pending_.begin(), pending_.end(), order_id));
  c.tasks.push_back({Task::Kind::delivery, order_id, o.restaurant, clock_});
  ++c.orders_served;
  if (log_events_) {
    log_.add(clock_, "order:" + std::to_string(order_id), "assigned",
             "courier=" + std::to_string(courier_id) +
                 ";pickup_distance=" + std::to_string(info.pickup_distance) +
                 ";eta_grid=" + std::to_string(info.eta.grid) +
                 ";eta=" + format_number(info.eta.minutes) +
                 ";courier_gap=" + std::to_string(info.courier_gap));
  }
  if (c.status == CourierStatus::idle) {
    start_next_task(c, clock_);
    advance_courier(c, clock_);
  }
  return info;
}

bool Simulator::apply_postpone(int order_id) {
  auto& o = orders_.at(static_cast<std::size_t>(order_id));
  if (o.status != OrderStatus::pending) throw std::logic_error("apply_postpone: order not pending");
  if (postpone_expires(order_id)) {
    o.status = OrderStatus::overdue;
    pending_.erase(std::find(pending_.begin(), pending_.end(), order_id));
    if (log_events_) log_.add(clock_, "order:" + std::to_string(order_id), "overdue");
    return true;
  }
  if (log_events_) log_.add(clock_, "order:" + std::to_string(order_id), "postponed");
  return false;
}

void Simulator::apply_reallocation(int courier_id, GridId target) {
  auto& c = couriers_.at(static_cast<std::size_t>(courier_id));
  if (c.status != CourierStatus::idle) throw std::logic_error("apply_reallocation: courier not idle");
  if (!region().contains(target) || region().distance(c.grid, target) != 1) {
    throw std::logic_error("apply_reallocation: target is not an adjacent grid in the region");
  }
  c.tasks.push_back({Task::Kind::reallocate, -1, target, clock_});
  if (log_events_) {
    log_.add(clock_, courier_entity(c), "reallocate",
             "from=" + std::to_string(c.grid) + ";to=" + std::to_string(target));
  }
  start_next_task(c, clock_);
}

GridId Simulator::position_at(int courier_id, double time) const {
  const auto& c = courier(courier_id);
  const bool moving = c.status == CourierStatus::to_pickup ||
                      c.status == CourierStatus::to_delivery ||
                      c.status == CourierStatus::reallocating;
  if (!moving || c.grid == c.leg_target) return c.grid;
  const auto path = shortest_path(region().coord(c.grid), region().coord(c.leg_target));
  const double progress = std::clamp(time - c.leg_start, 0.0, c.leg_end - c.leg_start);
  auto idx = static_cast<std::size_t>(std::floor(progress / kMinutesPerUnit));
  idx = std::min(idx, path.size() - 1);
  // intermediate path grids may fall outside the region; report the last in-region grid
  for (std::size_t k = idx + 1; k-- > 0;) {
    if (auto id = region().find(path[k])) return *id;
  }
  return c.grid;
}

Simulator::Counts Simulator::order_counts() const {
  Counts n;
  n.sampled = static_cast<int>(orders_.size());
  for (const auto& o : orders_) {
    if (o.status == OrderStatus::delivered) ++n.delivered;
    else if (o.status == OrderStatus::overdue) ++n.overdue;
    else ++n.active;
  }
  return n;
}

void Simulator::set_status(Courier& c, CourierStatus s, double t) {
  if (!is_legal_transition(c.status, s)) {
    throw std::logic_error(std::string("illegal courier transition ") + to_string(c.status) +
                           " -> " + to_string(s));
  }
  const double end = config_.shift_minutes;
  const double dt = std::max(0.0, std::min(t, end) - std::max(c.status_since, 0.0));
  switch (c.status) {
    case CourierStatus::idle: c.idle_minutes += dt; break;
    case CourierStatus::reallocating: c.reallocation_minutes += dt; break;
    default: c.delivery_minutes += dt; break;
  }
  if (log_events_) {
    log_.add(t, courier_entity(c), "status",
             std::string("from=") + to_string(c.status) + ";to=" + to_string(s) +
                 ";grid=" + std::to_string(c.grid));
  }
  c.status = s;
  c.status_since = t;
  if (s == CourierStatus::idle) c.idle_since = t;
  else c.idle_since.reset();
}

void Simulator::start_leg(Courier& c, GridId from, GridId to, double t) {
  const int units = region().distance(from, to);
  c.grid = from;
  c.leg_target = to;
  c.leg_start = t;
  c.leg_end = t + kMinutesPerUnit * units;
  c.distance_travelled += units;
  if (log_events_ && units > 0) {
    log_.add(t, courier_entity(c), "move",
             "from=" + std::to_string(from) + ";to=" + std::to_string(to) +
                 ";units=" + std::to_string(units));
  }
}

void Simulator::start_next_task(Courier& c, double t) {
  if (c.tasks.empty()) {
    set_status(c, CourierStatus::idle, t);
    return;
  }
  const Task& head = c.tasks.front();
  if (head.kind == Task::Kind::delivery) {
    start_leg(c, c.grid, order(head.order_id).restaurant, t);
    set_status(c, CourierStatus::to_pickup, t);
  } else {
    start_leg(c, c.grid, head.target, t);
    set_status(c, CourierStatus::reallocating, t);
  }
}

void Simulator::pickup(Courier& c, Order& o, double t) {
  o.status = OrderStatus::picked_up;
  o.pickup_time = t;
  if (log_events_) {
    log_.add(t, "order:" + std::to_string(o.id), "picked_up", "courier=" + std::to_string(c.id));
  }
  start_leg(c, o.restaurant, o.household, t);
  set_status(c, CourierStatus::to_delivery, t);
}

void Simulator::advance_courier(Courier& c, double until) {
  while (c.status != CourierStatus::idle && c.leg_end <= until) {
    const double te = c.leg_end;
    Task& head = c.tasks.front();
    switch (c.status) {
      case CourierStatus::to_pickup: {
        Order& o = orders_[static_cast<std::size_t>(head.order_id)];
        c.grid = o.restaurant;
        o.courier_arrival = te;
        if (log_events_) {
          log_.add(te, "order:" + std::to_string(o.id), "courier_arrival",
                   "courier=" + std::to_string(c.id) + ";ready=" + format_number(o.ready_time()));
        }
        if (o.ready_time() <= te) {
          pickup(c, o, te);
        } else {
          set_status(c, CourierStatus::waiting_at_restaurant, te);
          c.leg_start = te;
          c.leg_end = o.ready_time();
          c.leg_target = c.grid;
        }
        break;
      }
      case CourierStatus::waiting_at_restaurant:
        pickup(c, orders_[static_cast<std::size_t>(head.order_id)], te);
        break;
      case CourierStatus::to_delivery: {
        Order& o = orders_[static_cast<std::size_t>(head.order_id)];
        c.grid = o.household;
        o.status = OrderStatus::delivered;
        o.delivered_time = te;
        if (log_events_) {
          log_.add(te, "order:" + std::to_string(o.id), "delivered",
                   "courier=" + std::to_string(c.id));
        }
        c.tasks.pop_front();
        start_next_task(c, te);
        break;
      }
      case CourierStatus::reallocating:
        c.grid = head.target;
        c.tasks.pop_front();
        start_next_task(c, te);
        break;
      case CourierStatus::idle:
        break;
    }
  }
}

void Simulator::advance_all(double until) {
  for (auto& c : couriers_) advance_courier(c, until);
}

void Simulator::finish_shift() {
  const double end = config_.shift_minutes;
  for (auto& c : couriers_) {
    const double dt = std::max(0.0, end - std::max(c.status_since, 0.0));
    switch (c.status) {
      case CourierStatus::idle: c.idle_minutes += dt; break;
      case CourierStatus::reallocating: c.reallocation_minutes += dt; break;
      default: c.delivery_minutes += dt; break;
    }
    c.status_since = end;
  }
  if (log_events_) log_.add(end, "network", "end", "fleet=" + std::to_string(config_.fleet_size));
}

}  // namespace mealtwin
