#include "mealtwin/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mealtwin/errors.hpp"
#include "mealtwin/steering.hpp"

namespace mealtwin {

void TrainingPlan::validate() const {
  if (r1 < 1 || r2 < 1 || r3 < 1) throw ConfigError("training plan episode counts must be >= 1");
  if (window < 1) throw ConfigError("convergence window must be >= 1");
  if (threshold < 0.0) throw ConfigError("convergence threshold must be >= 0");
  if (extend_block < 1) throw ConfigError("extension block must be >= 1");
  if (hidden < 1) throw ConfigError("hidden width must be >= 1");
  for (const auto* p : {&dispatch, &steering}) {
    if (p->batch == 0 || p->buffer < p->batch) throw ConfigError("replay buffer smaller than batch");
    if (p->learn_every < 1 || p->target_every < 1) throw ConfigError("learning cadence must be >= 1");
  }
}

namespace {

void params_to_json(nlohmann::json& j, const DdqnParams& p) {
  j = {{"lr", p.lr},         {"gamma", p.gamma},         {"buffer", p.buffer},
       {"batch", p.batch},   {"learn_every", p.learn_every}, {"target_every", p.target_every},
       {"eps0", p.eps0},     {"eps_decay", p.eps_decay}, {"eps_min", p.eps_min},
       {"grad_clip", p.grad_clip}};
}

void params_from_json(const nlohmann::json& j, DdqnParams& p) {
  p.lr = j.value("lr", p.lr);
  p.gamma = j.value("gamma", p.gamma);
  p.buffer = j.value("buffer", p.buffer);
  p.batch = j.value("batch", p.batch);
  p.learn_every = j.value("learn_every", p.learn_every);
  p.target_every = j.value("target_every", p.target_every);
  p.eps0 = j.value("eps0", p.eps0);
  p.eps_decay = j.value("eps_decay", p.eps_decay);
  p.eps_min = j.value("eps_min", p.eps_min);
  p.grad_clip = j.value("grad_clip", p.grad_clip);
}

}  // namespace

void to_json(nlohmann::json& j, const TrainingPlan& p) {
  nlohmann::json d, s;
  params_to_json(d, p.dispatch);
  params_to_json(s, p.steering);
  j = {{"r1", p.r1},
       {"r2", p.r2},
       {"r3", p.r3},
       {"dispatch", d},
       {"steering", s},
       {"dispatch_output", to_string(p.dispatch_output)},
       {"hidden", p.hidden},
       {"window", p.window},
       {"threshold", p.threshold},
       {"extend_block", p.extend_block},
       {"extend", p.extend},
       {"finetune_eps_scale", p.finetune_eps_scale},
       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, TrainingPlan& p) {
  try {
    p.r1 = j.value("r1", p.r1);
    p.r2 = j.value("r2", p.r2);
    p.r3 = j.value("r3", p.r3);
    if (j.contains("dispatch")) params_from_json(j.at("dispatch"), p.dispatch);
    if (j.contains("steering")) params_from_json(j.at("steering"), p.steering);
    if (j.contains("dispatch_output")) {
      p.dispatch_output = parse_activation(j.at("dispatch_output").get<std::string>());
    }
    p.hidden = j.value("hidden", p.hidden);
    p.window = j.value("window", p.window);
    p.threshold = j.value("threshold", p.threshold);
    p.extend_block = j.value("extend_block", p.extend_block);
    p.extend = j.value("extend", p.extend);
    p.finetune_eps_scale = j.value("finetune_eps_scale", p.finetune_eps_scale);
    p.seed = j.value("seed", p.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training plan: ") + e.what());
  }
  p.validate();
}

void to_json(nlohmann::json& j, const TrainingReport& r) {
  auto phases = nlohmann::json::array();
  for (const auto& p : r.phases) {
    phases.push_back({{"name", p.name},
                      {"episodes", p.returns.size()},
                      {"returns", p.returns},
                      {"learn_updates", p.learn_updates},
                      {"final_epsilon", p.final_epsilon},
                      {"assessed", p.assessed},
                      {"converged", p.converged}});
  }
  j = {{"schema", "mealtwin.training/1"},
       {"mode", to_string(r.mode)},
       {"phases", phases},
       {"weight_files", r.weight_files}};
}

bool convergence_check(std::span<const double> series, int window, double threshold) {
  if (window < 1 || series.size() < 2 * static_cast<std::size_t>(window)) {
    throw std::invalid_argument("convergence_check: series shorter than two windows");
  }
  const auto w = static_cast<std::ptrdiff_t>(window);
  const auto end = series.end();
  const double last = std::accumulate(end - w, end, 0.0) / window;
  const double prev = std::accumulate(end - 2 * w, end - w, 0.0) / window;
  return std::abs(last - prev) <= threshold * std::abs(prev);
}

SimSeeds training_seeds(std::uint64_t plan_seed, int phase, int episode) {
  const auto p = static_cast<std::uint64_t>(phase);
  const auto e = static_cast<std::uint64_t>(episode);
  return {derive_seed(plan_seed, {stream::kOrders, p, e}), derive_seed(plan_seed, {stream::kPolicy, p, e})};
}

namespace {

PhaseReport run_phase(const TrainingPlan& plan, const std::string& name, int episodes,
                      const std::function<double(int)>& episode, const DdqnAgent& learner,
                      const QNet& dispatch_net, const QNet& steering_net) {
  PhaseReport rep;
  rep.name = name;
  int target = episodes;
  for (int e = 0; e < target; ++e) {
    try {
      rep.returns.push_back(episode(e));
    } catch (const NumericalError& err) {
      throw NumericalError(name + " episode " + std::to_string(e) + ": " + err.what() +
                           " (learn updates " + std::to_string(learner.learn_updates()) + ")");
    }
    rep.dispatch_hash.push_back(dispatch_net.hash());
    rep.steering_hash.push_back(steering_net.hash());
    if (e + 1 == target) {
      rep.assessed = rep.returns.size() >= 2 * static_cast<std::size_t>(plan.window);
      if (rep.assessed) {
        rep.converged = convergence_check(rep.returns, plan.window, plan.threshold);
        if (!rep.converged && plan.extend && target < 2 * episodes) {
          target = std::min(target + plan.extend_block, 2 * episodes);
        }
      }
    }
  }
  rep.learn_updates = learner.learn_updates();
  rep.final_epsilon = learner.current_epsilon();
  return rep;
}

}  // namespace

TrainedPolicies sandwich_train(const TrainingPlan& plan, const ScenarioConfig& scenario,
                               const DemandPredictor* predictor, Mode mode) {
  plan.validate();
  scenario.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto mode_tag = static_cast<std::uint64_t>(mode);

  QNet dnet = QNet::dispatch_net(scenario.fleet_size, plan.hidden, plan.dispatch_output);
  Rng init_d(derive_seed(plan.seed, {stream::kInit, mode_tag, 1}));
  dnet.init_uniform(init_d);
  QNet snet = QNet::steering_net();
  Rng init_s(derive_seed(plan.seed, {stream::kInit, mode_tag, 2}));
  snet.init_uniform(init_s);

  DdqnAgent dispatch_agent(std::move(dnet), plan.dispatch, derive_seed(plan.seed, {mode_tag, 1}));
  DdqnAgent steer_agent(std::move(snet), plan.steering, derive_seed(plan.seed, {mode_tag, 2}));

  TrainedPolicies out;
  out.report.mode = mode;

  // Phase 1: dispatch without steering.
  dispatch_agent.start_phase(1.0);
  out.report.phases[0] = run_phase(
      plan, "dispatch", plan.r1,
      [&](int e) {
        Simulator sim(scenario, predictor, mode, training_seeds(plan.seed, 1, e), false);
        DdqnDispatcher d(dispatch_agent, plan.rewards);
        sim.run(d, nullptr);
        return d.stats().episode_return;
      },
      dispatch_agent, dispatch_agent.net(), steer_agent.net());
  out.dispatch_solo = dispatch_agent.net();

  // Phase 2: steering over the frozen dispatcher.
  steer_agent.start_phase(1.0);
  out.report.phases[1] = run_phase(
      plan, "steering", plan.r2,
      [&](int e) {
        Simulator sim(scenario, predictor, mode, training_seeds(plan.seed, 2, e), false);
        DdqnDispatcher d(out.dispatch_solo, plan.rewards);
        DdqnSteerer s(steer_agent);
        sim.run(d, &s);
        return s.stats().episode_return;
      },
      steer_agent, dispatch_agent.net(), steer_agent.net());
  out.steering = steer_agent.net();

  // Phase 3: dispatch fine-tuning over the frozen steering policy.
  dispatch_agent.start_phase(plan.finetune_eps_scale);
  out.report.phases[2] = run_phase(
      plan, "finetune", plan.r3,
      [&](int e) {
        Simulator sim(scenario, predictor, mode, training_seeds(plan.seed, 3, e), false);
        DdqnDispatcher d(dispatch_agent, plan.rewards);
        DdqnSteerer s(out.steering);
        sim.run(d, &s);
        return d.stats().episode_return;
      },
      dispatch_agent, dispatch_agent.net(), steer_agent.net());
  out.dispatch_final = dispatch_agent.net();

  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace mealtwin
