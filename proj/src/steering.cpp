#include "mealtwin/steering.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace mealtwin {

double local_score(const ServiceRegion& region, std::span<const int> gap, GridId grid) {
  if (gap.size() != region.size()) throw std::invalid_argument("gap field size mismatch");
  double s = 0.0;
  for (GridId g : region.neighborhood(grid)) s += gap[static_cast<std::size_t>(g)];
  return s;
}

double local_score(const Simulator& sim, GridId grid, Horizon h) {
  const auto gap = sim.gap_field(h);
  return local_score(sim.region(), gap, grid);
}

SteerEncoding encode_steer_state(const ServiceRegion& region, std::span<const int> gap, GridId grid) {
  SteerEncoding enc;
  enc.state.assign(2 * kSteerSlots, 0.0);
  enc.mask.assign(kSteerSlots, 0);
  enc.slots[0] = grid;
  const auto nb = region.neighbors(grid);
  for (int k = 0; k < 6; ++k) enc.slots[static_cast<std::size_t>(k + 1)] = nb[static_cast<std::size_t>(k)];
  for (std::size_t k = 0; k < enc.slots.size(); ++k) {
    if (!enc.slots[k]) continue;
    const GridId g = *enc.slots[k];
    enc.mask[k] = 1;
    enc.state[2 * k] = gap[static_cast<std::size_t>(g)];
    enc.state[2 * k + 1] = local_score(region, gap, g);
  }
  return enc;
}

SteerEncoding encode_steer_state(const Simulator& sim, int courier_id) {
  const auto eligible = sim.steering_eligible();
  if (std::find(eligible.begin(), eligible.end(), courier_id) == eligible.end()) {
    throw std::logic_error("encode_steer_state: courier is not steering-eligible");
  }
  const auto gap = sim.gap_field(sim.horizon());
  return encode_steer_state(sim.region(), gap, sim.courier(courier_id).grid);
}

std::vector<int> shifted_gaps(std::span<const int> gap, GridId from, GridId to) {
  std::vector<int> out(gap.begin(), gap.end());
  --out.at(static_cast<std::size_t>(from));
  ++out.at(static_cast<std::size_t>(to));
  return out;
}

double reward_reallocate(const ServiceRegion& region, std::span<const int> gap, GridId from,
                         std::optional<GridId> to) {
  if (!to || *to == from) return 0.0;
  if (region.distance(from, *to) != 1) throw std::invalid_argument("reallocation target not adjacent");
  const auto after = shifted_gaps(gap, from, *to);
  const auto hood = region.neighborhood(from);
  double change = 0.0;
  for (GridId g : hood) change += local_score(region, after, g) - local_score(region, gap, g);
  const double r1 = gap[static_cast<std::size_t>(from)];
  const double r2 = gap[static_cast<std::size_t>(*to)];
  return r1 - r2 + change / static_cast<double>(hood.size());
}

DdqnSteerer::DdqnSteerer(DdqnAgent& learner) : learner_(&learner) {}
DdqnSteerer::DdqnSteerer(const QNet& frozen) : frozen_(&frozen) {}

const QNet& DdqnSteerer::net() const { return learner_ ? learner_->net() : *frozen_; }

void DdqnSteerer::run_phase(Simulator& sim) {
  const bool last_minute = sim.clock() == sim.config().shift_minutes - 1;
  for (int cid : sim.steering_eligible()) {
    const GridId from = sim.courier(cid).grid;
    const auto gap = sim.gap_field(sim.horizon());
    const auto enc = encode_steer_state(sim.region(), gap, from);
    const auto q = net().forward(enc.state);
    const double eps = learner_ ? learner_->current_epsilon() : 0.0;
    const int a = select_action(q, enc.mask, eps, sim.policy_rng());
    const GridId to = *enc.slots[static_cast<std::size_t>(a)];
    const double r = reward_reallocate(sim.region(), gap, from, a == 0 ? std::nullopt : std::optional(to));
    if (a != 0) {
      sim.apply_reallocation(cid, to);
      ++stats_.moves;
    }
    stats_.episode_return += r;
    ++stats_.decisions;
    if (trace_) stats_.trace.push_back({sim.clock(), cid, from, to, r});
    if (!learner_) continue;

    Transition tr;
    tr.s = enc.state;
    tr.a = a;
    tr.r = r;
    if (a == 0) {
      tr.s2 = enc.state;
      tr.mask2 = enc.mask;
    } else {
      const auto after = shifted_gaps(gap, from, to);
      auto next = encode_steer_state(sim.region(), after, to);
      tr.s2 = std::move(next.state);
      tr.mask2 = std::move(next.mask);
    }
    tr.done = last_minute;
    learner_->record(std::move(tr));
    learner_->on_decision();
  }
  if (learner_) learner_->on_step();
}

void write_steer_trace(std::ostream& out, const std::vector<SteerTraceRow>& rows) {
  out << "minute,courier,from,to,reward\n";
  for (const auto& r : rows) {
    out << r.minute << ',' << r.courier << ',' << r.from << ',' << r.to << ','
        << format_number(r.reward) << '\n';
  }
}

}  // namespace mealtwin
