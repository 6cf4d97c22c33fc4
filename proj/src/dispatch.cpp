#include "mealtwin/dispatch.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>

namespace mealtwin {

DispatchEncoding encode_state(const Simulator& sim, int order_id) {
  const Order& o = sim.order(order_id);
  if (o.status != OrderStatus::pending) throw std::logic_error("encode_state: order not pending");
  const auto gap = sim.gap_field(sim.horizon());
  const auto& couriers = sim.couriers();
  DispatchEncoding enc;
  enc.state.reserve(1 + 3 * couriers.size());
  enc.state.push_back(o.est_ready() - sim.clock());
  for (const auto& c : couriers) {
    const auto eta = sim.courier_eta_idle(c.id);
    enc.state.push_back(eta.minutes);
    enc.state.push_back(sim.region().distance(eta.grid, o.restaurant));
    enc.state.push_back(gap[static_cast<std::size_t>(eta.grid)]);
  }
  enc.mask = dispatch_mask(sim);
  return enc;
}

Mask dispatch_mask(const Simulator& sim) {
  Mask m;
  m.reserve(sim.couriers().size() + 1);
  for (const auto& c : sim.couriers()) m.push_back(sim.dispatch_eligible(c.id) ? 1 : 0);
  m.push_back(1);
  return m;
}

double reward_assign(double time_gap, int pickup_distance, int courier_gap, const RewardWeights& w) {
  return w.base + w.late * std::max(time_gap, 0.0) + w.early * std::max(-time_gap, 0.0) +
         w.distance * pickup_distance + w.balance * (courier_gap > 0 ? 1.0 : -1.0);
}

PostponeOutcome reward_postpone(const Simulator& sim, int order_id, const RewardWeights& w) {
  if (sim.postpone_expires(order_id)) return {w.overdue, true};
  return {w.postpone, false};
}

std::vector<double> dummy_next_state(const std::vector<double>& s) {
  std::vector<double> out = s;
  for (std::size_t i = 1; i < out.size(); i += 3) out[i] = std::max(out[i] - 1.0, 0.0);
  return out;
}

std::vector<double> postponed_next_state(const std::vector<double>& s) {
  std::vector<double> out = dummy_next_state(s);
  out[0] -= 1.0;
  return out;
}

int nearest_idle_policy(Simulator& sim, int order_id) {
  const Order& o = sim.order(order_id);
  std::vector<int> best;
  int best_d = std::numeric_limits<int>::max();
  for (const auto& c : sim.couriers()) {
    if (c.status != CourierStatus::idle) continue;
    const int d = sim.region().distance(c.grid, o.restaurant);
    if (d < best_d) {
      best_d = d;
      best.clear();
    }
    if (d == best_d) best.push_back(c.id);
  }
  if (best.empty()) return static_cast<int>(sim.couriers().size());
  if (best.size() == 1) return best.front();
  std::uniform_int_distribution<std::size_t> pick(0, best.size() - 1);
  return best[pick(sim.tiebreak_rng())];
}

namespace {

// Applies `action` and returns the raw reward.
double apply_action(Simulator& sim, int order_id, int action, const RewardWeights& w, bool* removed) {
  const int fleet = static_cast<int>(sim.couriers().size());
  *removed = false;
  if (action == fleet) {
    const auto out = reward_postpone(sim, order_id, w);
    *removed = sim.apply_postpone(order_id);
    return out.reward;
  }
  const auto info = sim.apply_dispatch(order_id, action);
  const double gap = info.expected_arrival - sim.order(order_id).ready_time();
  return reward_assign(gap, info.pickup_distance, info.courier_gap, w);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

void NearestIdleDispatcher::run_phase(Simulator& sim) {
  for (int oid : sim.pending_orders_ranked()) {
    const int a = nearest_idle_policy(sim, oid);
    bool removed = false;
    const double r = apply_action(sim, oid, a, w_, &removed);
    stats_.episode_return += r;
    ++stats_.decisions;
    if (trace_) {
      stats_.trace.push_back({sim.clock(), oid, a, r, std::numeric_limits<double>::quiet_NaN()});
    }
  }
}

DdqnDispatcher::DdqnDispatcher(DdqnAgent& learner, RewardWeights w) : learner_(&learner), w_(w) {}
DdqnDispatcher::DdqnDispatcher(const QNet& frozen, RewardWeights w) : frozen_(&frozen), w_(w) {}

const QNet& DdqnDispatcher::net() const { return learner_ ? learner_->net() : *frozen_; }

void DdqnDispatcher::run_phase(Simulator& sim) {
  const int fleet = static_cast<int>(sim.couriers().size());
  const bool last_minute = sim.clock() == sim.config().shift_minutes - 1;
  const auto ranked = sim.pending_orders_ranked();

  std::optional<DispatchEncoding> next;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const int oid = ranked[i];
    const auto t0 = Clock::now();
    DispatchEncoding enc = next ? std::move(*next) : encode_state(sim, oid);
    next.reset();
    const auto q = net().forward(enc.state);
    const double eps = learner_ ? learner_->current_epsilon() : 0.0;
    const int a = select_action(q, enc.mask, eps, sim.policy_rng());
    if (timing_) stats_.latency_sec.push_back(seconds_since(t0));

    bool removed = false;
    const double r = apply_action(sim, oid, a, w_, &removed);
    stats_.episode_return += r;
    ++stats_.decisions;
    if (trace_) stats_.trace.push_back({sim.clock(), oid, a, r, masked_max(q, enc.mask)});
    if (!learner_) continue;

    Transition tr;
    tr.s = enc.state;
    tr.a = a;
    tr.r = r / kRewardScale;
    const bool postponed = a == fleet && !removed;
    const bool more = i + 1 < ranked.size();
    if (postponed) {
      tr.s2 = postponed_next_state(enc.state);
      tr.mask2 = enc.mask;
      tr.done = last_minute;
    } else if (more) {
      next = encode_state(sim, ranked[i + 1]);
      tr.s2 = next->state;
      tr.mask2 = next->mask;
    } else {
      tr.s2 = dummy_next_state(enc.state);
      tr.mask2 = dispatch_mask(sim);
      tr.done = last_minute;
    }
    learner_->record(std::move(tr));
    learner_->on_decision();
  }
  if (learner_) learner_->on_step();
}

void write_dispatch_trace(std::ostream& out, const std::vector<DispatchTraceRow>& rows) {
  out << "minute,order,action,reward,q_max\n";
  for (const auto& r : rows) {
    out << r.minute << ',' << r.order << ',' << r.action << ',' << format_number(r.reward) << ',';
    if (!std::isnan(r.q_max)) out << format_number(r.q_max);
    out << '\n';
  }
}

}  // namespace mealtwin
