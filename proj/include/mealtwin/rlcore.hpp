#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mealtwin/rng.hpp"

namespace mealtwin {

inline constexpr const char* kQNetSchema = "mealtwin.qnet/1";

enum class Activation { relu, linear };

const char* to_string(Activation a);
Activation parse_activation(const std::string& s);

using Mask = std::vector<std::uint8_t>;  // 1 = valid action

struct LayerShape {
  int in = 0;
  int out = 0;
  Activation act = Activation::linear;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Dense feed-forward Q network with an optional shared-weight front layer
/// that maps every courier triple (Δt, d, SD) to one scalar embedding.
///
/// Parameters live in one flat vector: [β₁ β₂ β₃] (conv only), then per layer
/// the row-major weight matrix (out × in) followed by the bias.
///
/// Inputs are multiplied by a fixed, non-trainable scale first. Conv nets hold
/// four factors (order feature, then Δt, d, SD shared by every courier);
/// dense nets hold one per input.
class QNet {
 public:
  QNet() = default;
  QNet(bool conv, std::vector<LayerShape> layers);

  /// [Δt^r, (Δt, d, SD) × fleet] -> conv -> hidden relu -> fleet + 1 outputs.
  static QNet dispatch_net(int fleet_size, int hidden = 32, Activation output = Activation::linear);
  /// 14 -> 32 relu -> 16 relu -> 7 linear.
  static QNet steering_net();

  void init_uniform(Rng& rng);

  const std::vector<double>& input_scale() const { return input_scale_; }
  void set_input_scale(std::vector<double> scale);

  int input_size() const;
  int output_size() const { return layers_.empty() ? 0 : layers_.back().out; }
  bool has_conv() const { return conv_; }
  const std::vector<LayerShape>& layers() const { return layers_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  std::vector<double> forward(std::span<const double> x) const;

  /// Accumulates dL/dθ into `grad` given dL/dq at input x; returns q.
  std::vector<double> backward(std::span<const double> x, std::span<const double> dq,
                               std::span<double> grad) const;

  std::uint64_t hash() const;

  friend bool operator==(const QNet&, const QNet&) = default;

 private:
  std::size_t layer_offset(std::size_t l) const;
  // Layer inputs and pre-activations for one forward pass.
  struct Trace {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
  };
  std::vector<double> run(std::span<const double> x, Trace* trace) const;

  bool conv_ = false;
  std::vector<LayerShape> layers_;
  std::vector<double> params_;
  std::vector<double> input_scale_;
};

void to_json(nlohmann::json& j, const QNet& net);
void from_json(const nlohmann::json& j, QNet& net);

/// Weights document with a free-form metadata object.
void save_qnet(const std::string& path, const QNet& net, const nlohmann::json& meta);
QNet load_qnet(const std::string& path, nlohmann::json* meta = nullptr);

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  void step(std::span<double> params, std::span<const double> grad);
};

struct Transition {
  std::vector<double> s;
  int a = 0;
  double r = 0.0;
  std::vector<double> s2;
  bool done = false;
  Mask mask2;
};

/// Fixed-capacity FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  void clear();
  /// Oldest first.
  const Transition& at(std::size_t i) const;
  /// `n` distinct transitions, uniformly; n must not exceed size().
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // index of the oldest item once full
  std::vector<Transition> items_;
};

/// One gradient step on the mean squared TD error. Returns the loss.
/// Throws NumericalError on a non-finite loss or parameter.
double learn(QNet& value, const QNet& target, std::span<const Transition* const> batch, double gamma,
             AdamState& adam, double grad_clip = 0.5);

double epsilon(std::int64_t learn_updates, double eps0 = 0.95, double decay = 0.99,
               double eps_min = 0.005);

/// ε-greedy over the valid actions; greedy ties go to the lowest index.
int select_action(std::span<const double> q, const Mask& mask, double eps, Rng& rng);
int greedy_action(std::span<const double> q, const Mask& mask);

/// Masked maximum of q; the mask must have a valid entry.
double masked_max(std::span<const double> q, const Mask& mask);

class TargetSync {
 public:
  explicit TargetSync(int every = 100) : every_(every) {}
  /// Counts one decision; true when the target must be refreshed now.
  bool on_decision() { return ++decisions_ % every_ == 0; }
  std::int64_t decisions() const { return decisions_; }

 private:
  int every_;
  std::int64_t decisions_ = 0;
};

void sync_target(const QNet& value, QNet& target);

struct DdqnParams {
  double lr = 5e-4;
  double gamma = 0.8;
  std::size_t buffer = 1000;
  std::size_t batch = 300;
  int learn_every = 5;
  int target_every = 100;
  double eps0 = 0.95;
  double eps_decay = 0.99;
  double eps_min = 0.005;
  double grad_clip = 0.5;
};

/// Learner bundle owned by one training loop: value and target nets, replay
/// buffer, optimizer and the counters that drive ε and synchronization.
class DdqnAgent {
 public:
  DdqnAgent(QNet net, DdqnParams params, std::uint64_t seed);

  const QNet& net() const { return value_; }
  QNet& net() { return value_; }
  const QNet& target() const { return target_; }
  const DdqnParams& params() const { return params_; }
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }

  double current_epsilon() const;
  std::int64_t learn_updates() const { return learn_updates_; }
  double last_loss() const { return last_loss_; }

  /// New phase: empty buffer, T_L = 0, fresh optimizer, ε restarts at
  /// `eps_scale` · ε₀.
  void start_phase(double eps_scale = 1.0);

  void record(Transition t);
  /// Counts one decision and syncs the target every `target_every`.
  void on_decision();
  /// Counts one environment step; learns every `learn_every` steps once the
  /// buffer holds a full batch.
  void on_step();
  /// Unconditional learning step (buffer must hold a batch).
  double learn_now();

 private:
  QNet value_;
  QNet target_;
  DdqnParams params_;
  ReplayBuffer buffer_;
  AdamState adam_;
  TargetSync sync_;
  Rng replay_rng_;
  std::int64_t learn_updates_ = 0;
  std::int64_t steps_ = 0;
  double eps_scale_ = 1.0;
  double last_loss_ = 0.0;
};

// --- tabular oracle --------------------------------------------------------

/// Small deterministic MDP for validating the learners.
struct ToyMdp {
  int num_states = 1;
  int num_actions = 2;
  int start = 0;
  std::vector<std::vector<int>> next;        // next[s][a]; -1 = terminal
  std::vector<std::vector<double>> reward;   // reward[s][a]
};

ToyMdp make_bandit(double r0 = 1.0, double r1 = 0.0);
/// States 0 -> 1 -> 2 -> end; action 0 moves on with reward `step_reward`,
/// action 1 ends the episode with 0.
ToyMdp make_chain(double step_reward = 1.0);

using QTable = std::vector<std::vector<double>>;

/// Off-policy TD control with ε-greedy behaviour and step size α.
QTable tabular_q_learning(const ToyMdp& mdp, int episodes, double alpha, double gamma, double eps,
                          Rng& rng);

/// Exact Q* by repeated Bellman backups.
QTable value_iteration(const ToyMdp& mdp, double gamma, double tol = 1e-12);

}  // namespace mealtwin
