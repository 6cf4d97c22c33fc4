#include "mealtwin/rlcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mealtwin/errors.hpp"

namespace mealtwin {

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

// --- QNet ------------------------------------------------------------------

QNet::QNet(bool conv, std::vector<LayerShape> layers) : conv_(conv), layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("QNet needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].in <= 0 || layers_[l].out <= 0) throw std::invalid_argument("empty layer");
    if (l > 0 && layers_[l].in != layers_[l - 1].out) {
      throw std::invalid_argument("layer shapes do not chain");
    }
  }
  if (conv_ && layers_[0].in < 2) throw std::invalid_argument("conv net needs at least one courier");
  std::size_t n = conv_ ? 3 : 0;
  for (const auto& L : layers_) n += static_cast<std::size_t>(L.out) * (L.in + 1);
  params_.assign(n, 0.0);
  input_scale_.assign(conv_ ? 4 : static_cast<std::size_t>(layers_[0].in), 1.0);
}

void QNet::set_input_scale(std::vector<double> scale) {
  if (scale.size() != input_scale_.size()) throw std::invalid_argument("input scale length mismatch");
  for (double v : scale) {
    if (!std::isfinite(v)) throw std::invalid_argument("input scale must be finite");
  }
  input_scale_ = std::move(scale);
}

// Feature scales bring minutes, grid units and gaps to roughly unit range.
QNet QNet::dispatch_net(int fleet_size, int hidden, Activation output) {
  QNet net(true, {{1 + fleet_size, hidden, Activation::relu}, {hidden, fleet_size + 1, output}});
  net.set_input_scale({0.1, 0.1, 0.5, 0.2});
  return net;
}

QNet QNet::steering_net() {
  QNet net(false, {{14, 32, Activation::relu}, {32, 16, Activation::relu}, {16, 7, Activation::linear}});
  std::vector<double> scale(14);
  for (std::size_t i = 0; i < scale.size(); ++i) scale[i] = i % 2 == 0 ? 0.2 : 0.1;
  net.set_input_scale(std::move(scale));
  return net;
}

void QNet::init_uniform(Rng& rng) {
  if (conv_) {
    const double a = std::sqrt(6.0 / (3 + 1));
    std::uniform_real_distribution<double> u(-a, a);
    for (int k = 0; k < 3; ++k) params_[static_cast<std::size_t>(k)] = u(rng);
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const double a = std::sqrt(6.0 / (L.in + L.out));
    std::uniform_real_distribution<double> u(-a, a);
    const std::size_t off = layer_offset(l);
    const std::size_t nw = static_cast<std::size_t>(L.in) * L.out;
    for (std::size_t i = 0; i < nw; ++i) params_[off + i] = u(rng);
    for (int i = 0; i < L.out; ++i) params_[off + nw + static_cast<std::size_t>(i)] = 0.0;
  }
}

int QNet::input_size() const {
  if (layers_.empty()) return 0;
  return conv_ ? 1 + 3 * (layers_[0].in - 1) : layers_[0].in;
}

std::size_t QNet::layer_offset(std::size_t l) const {
  std::size_t off = conv_ ? 3 : 0;
  for (std::size_t i = 0; i < l; ++i) {
    off += static_cast<std::size_t>(layers_[i].out) * (layers_[i].in + 1);
  }
  return off;
}

std::vector<double> QNet::run(std::span<const double> x, Trace* trace) const {
  if (static_cast<int>(x.size()) != input_size()) {
    throw std::invalid_argument("QNet input has length " + std::to_string(x.size()) + ", expected " +
                                std::to_string(input_size()));
  }
  const auto& sc = input_scale_;
  std::vector<double> h;
  if (conv_) {
    const std::size_t fleet = (x.size() - 1) / 3;
    h.resize(fleet + 1);
    h[0] = x[0] * sc[0];
    for (std::size_t c = 0; c < fleet; ++c) {
      const double* t = &x[1 + 3 * c];
      h[c + 1] = params_[0] * t[0] * sc[1] + params_[1] * t[1] * sc[2] + params_[2] * t[2] * sc[3];
    }
  } else {
    h.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) h[i] = x[i] * sc[i];
  }
  std::size_t off = conv_ ? 3 : 0;
  for (const auto& L : layers_) {
    const double* W = &params_[off];
    const double* b = W + static_cast<std::size_t>(L.in) * L.out;
    std::vector<double> z(static_cast<std::size_t>(L.out));
    for (int o = 0; o < L.out; ++o) {
      double acc = b[o];
      const double* row = W + static_cast<std::size_t>(o) * L.in;
      for (int i = 0; i < L.in; ++i) acc += row[i] * h[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = acc;
    }
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(z);
    }
    if (L.act == Activation::relu) {
      for (auto& v : z) v = std::max(v, 0.0);
    }
    h = std::move(z);
    off += static_cast<std::size_t>(L.out) * (L.in + 1);
  }
  return h;
}

std::vector<double> QNet::forward(std::span<const double> x) const { return run(x, nullptr); }

std::vector<double> QNet::backward(std::span<const double> x, std::span<const double> dq,
                                   std::span<double> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient length mismatch");
  if (static_cast<int>(dq.size()) != output_size()) throw std::invalid_argument("dq length mismatch");
  Trace tr;
  auto q = run(x, &tr);

  std::vector<double> delta(dq.begin(), dq.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    if (L.act == Activation::relu) {
      for (std::size_t o = 0; o < delta.size(); ++o) {
        if (tr.pre[l][o] <= 0.0) delta[o] = 0.0;
      }
    }
    const std::size_t off = layer_offset(l);
    const double* W = &params_[off];
    double* gW = &grad[off];
    double* gb = gW + static_cast<std::size_t>(L.in) * L.out;
    const auto& in = tr.inputs[l];
    std::vector<double> dh(static_cast<std::size_t>(L.in), 0.0);
    for (int o = 0; o < L.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      if (d == 0.0) continue;
      gb[o] += d;
      const std::size_t row = static_cast<std::size_t>(o) * L.in;
      for (int i = 0; i < L.in; ++i) {
        gW[row + i] += d * in[static_cast<std::size_t>(i)];
        dh[static_cast<std::size_t>(i)] += d * W[row + i];
      }
    }
    delta = std::move(dh);
  }
  if (conv_) {
    const std::size_t fleet = (x.size() - 1) / 3;
    for (std::size_t c = 0; c < fleet; ++c) {
      for (std::size_t k = 0; k < 3; ++k) grad[k] += delta[c + 1] * x[1 + 3 * c + k] * input_scale_[k + 1];
    }
  }
  return q;
}

std::uint64_t QNet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : params_) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof bits);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void to_json(nlohmann::json& j, const QNet& net) {
  j = nlohmann::json::object();
  j["schema"] = kQNetSchema;
  j["conv"] = net.has_conv();
  const auto& p = net.params();
  std::size_t off = 0;
  if (net.has_conv()) {
    j["conv_beta"] = {p[0], p[1], p[2]};
    off = 3;
  }
  auto layers = nlohmann::json::array();
  for (const auto& L : net.layers()) {
    const std::size_t nw = static_cast<std::size_t>(L.in) * L.out;
    layers.push_back({{"in", L.in},
                      {"out", L.out},
                      {"activation", to_string(L.act)},
                      {"weights", std::vector<double>(p.begin() + off, p.begin() + off + nw)},
                      {"bias", std::vector<double>(p.begin() + off + nw, p.begin() + off + nw + L.out)}});
    off += nw + L.out;
  }
  j["layers"] = std::move(layers);
  j["input_scale"] = net.input_scale();
}

void from_json(const nlohmann::json& j, QNet& net) {
  try {
    if (j.at("schema").get<std::string>() != kQNetSchema) {
      throw DataError("unsupported weights schema '" + j.at("schema").get<std::string>() + "'");
    }
    const bool conv = j.at("conv").get<bool>();
    std::vector<LayerShape> shapes;
    for (const auto& L : j.at("layers")) {
      shapes.push_back({L.at("in").get<int>(), L.at("out").get<int>(),
                        parse_activation(L.at("activation").get<std::string>())});
    }
    QNet out(conv, shapes);
    auto& p = out.params();
    std::size_t off = 0;
    if (conv) {
      const auto beta = j.at("conv_beta").get<std::vector<double>>();
      if (beta.size() != 3) throw DataError("conv_beta must hold 3 values");
      std::copy(beta.begin(), beta.end(), p.begin());
      off = 3;
    }
    const auto& layers = j.at("layers");
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      const auto w = layers[l].at("weights").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      const std::size_t nw = static_cast<std::size_t>(shapes[l].in) * shapes[l].out;
      if (w.size() != nw || b.size() != static_cast<std::size_t>(shapes[l].out)) {
        throw DataError("layer " + std::to_string(l) + " parameter count does not match its shape");
      }
      std::copy(w.begin(), w.end(), p.begin() + static_cast<std::ptrdiff_t>(off));
      std::copy(b.begin(), b.end(), p.begin() + static_cast<std::ptrdiff_t>(off + nw));
      off += nw + b.size();
    }
    for (double v : p) {
      if (!std::isfinite(v)) throw DataError("non-finite weight in weights document");
    }
    if (j.contains("input_scale")) out.set_input_scale(j.at("input_scale").get<std::vector<double>>());
    net = std::move(out);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed weights document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("bad network shape: ") + e.what());
  }
}

void save_qnet(const std::string& path, const QNet& net, const nlohmann::json& meta) {
  nlohmann::json j = net;
  j["meta"] = meta;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(1) << '\n';
}

QNet load_qnet(const std::string& path, nlohmann::json* meta) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open weights file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  QNet net = j.get<QNet>();
  if (meta) *meta = j.value("meta", nlohmann::json::object());
  return net;
}

// --- optimizer and learning -----------------------------------------------

void AdamState::step(std::span<double> params, std::span<const double> grad) {
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
    t = 0;
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

void ReplayBuffer::clear() {
  items_.clear();
  head_ = 0;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (n > items_.size()) throw std::invalid_argument("sample larger than buffer");
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(&items_[idx[i]]);
  }
  return out;
}

double masked_max(std::span<const double> q, const Mask& mask) {
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (mask.empty() || mask[a]) {
      best = std::max(best, q[a]);
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("masked_max: no valid action");
  return best;
}

double learn(QNet& value, const QNet& target, std::span<const Transition* const> batch, double gamma,
             AdamState& adam, double grad_clip) {
  if (batch.empty()) throw std::invalid_argument("learn: empty batch");
  std::vector<double> grad(value.num_params(), 0.0);
  std::vector<double> dq(static_cast<std::size_t>(value.output_size()));
  const double n = static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Transition* t : batch) {
    double y = t->r;
    if (!t->done) y += gamma * masked_max(target.forward(t->s2), t->mask2);
    const auto q = value.forward(t->s);
    const double err = q[static_cast<std::size_t>(t->a)] - y;
    loss += err * err / n;
    std::fill(dq.begin(), dq.end(), 0.0);
    dq[static_cast<std::size_t>(t->a)] = 2.0 * err / n;
    value.backward(t->s, dq, grad);
  }
  if (!std::isfinite(loss)) throw NumericalError("non-finite TD loss");
  for (auto& g : grad) g = std::clamp(g, -grad_clip, grad_clip);
  adam.step(value.params(), grad);
  for (double p : value.params()) {
    if (!std::isfinite(p)) throw NumericalError("non-finite parameter after update");
  }
  return loss;
}

double epsilon(std::int64_t learn_updates, double eps0, double decay, double eps_min) {
  if (learn_updates < 0) throw std::invalid_argument("epsilon: negative update count");
  return std::max(std::pow(decay, static_cast<double>(learn_updates)) * eps0, eps_min);
}

int greedy_action(std::span<const double> q, const Mask& mask) {
  int best = -1;
  for (std::size_t a = 0; a < q.size(); ++a) {
    if (!mask.empty() && !mask[a]) continue;
    if (best < 0 || q[a] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
  }
  if (best < 0) throw std::invalid_argument("select_action: no valid action");
  return best;
}

int select_action(std::span<const double> q, const Mask& mask, double eps, Rng& rng) {
  if (!mask.empty() && mask.size() != q.size()) throw std::invalid_argument("mask length mismatch");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (eps > 0.0 && u(rng) < eps) {
    std::vector<int> valid;
    for (std::size_t a = 0; a < q.size(); ++a) {
      if (mask.empty() || mask[a]) valid.push_back(static_cast<int>(a));
    }
    if (valid.empty()) throw std::invalid_argument("select_action: no valid action");
    std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
    return valid[pick(rng)];
  }
  return greedy_action(q, mask);
}

void sync_target(const QNet& value, QNet& target) { target = value; }

// --- agent -----------------------------------------------------------------

DdqnAgent::DdqnAgent(QNet net, DdqnParams params, std::uint64_t seed)
    : value_(std::move(net)),
      params_(params),
      buffer_(params.buffer),
      sync_(params.target_every),
      replay_rng_(derive_seed(seed, {stream::kReplay})) {
  target_ = value_;
  adam_.lr = params_.lr;
}

double DdqnAgent::current_epsilon() const {
  return epsilon(learn_updates_, params_.eps0 * eps_scale_, params_.eps_decay, params_.eps_min);
}

void DdqnAgent::start_phase(double eps_scale) {
  buffer_.clear();
  learn_updates_ = 0;
  steps_ = 0;
  eps_scale_ = eps_scale;
  adam_ = AdamState{};
  adam_.lr = params_.lr;
  sync_ = TargetSync(params_.target_every);
  target_ = value_;
}

void DdqnAgent::record(Transition t) { buffer_.push(std::move(t)); }

void DdqnAgent::on_decision() {
  if (sync_.on_decision()) sync_target(value_, target_);
}

void DdqnAgent::on_step() {
  ++steps_;
  if (steps_ % params_.learn_every == 0 && buffer_.size() >= params_.batch) learn_now();
}

double DdqnAgent::learn_now() {
  const auto batch = buffer_.sample(params_.batch, replay_rng_);
  last_loss_ = learn(value_, target_, batch, params_.gamma, adam_, params_.grad_clip);
  ++learn_updates_;
  return last_loss_;
}

// --- tabular oracle --------------------------------------------------------

ToyMdp make_bandit(double r0, double r1) {
  ToyMdp m;
  m.num_states = 1;
  m.num_actions = 2;
  m.next = {{-1, -1}};
  m.reward = {{r0, r1}};
  return m;
}

ToyMdp make_chain(double step_reward) {
  ToyMdp m;
  m.num_states = 3;
  m.num_actions = 2;
  m.next = {{1, -1}, {2, -1}, {-1, -1}};
  m.reward = {{step_reward, 0.0}, {step_reward, 0.0}, {step_reward, 0.0}};
  return m;
}

QTable tabular_q_learning(const ToyMdp& mdp, int episodes, double alpha, double gamma, double eps,
                          Rng& rng) {
  QTable Q(static_cast<std::size_t>(mdp.num_states),
           std::vector<double>(static_cast<std::size_t>(mdp.num_actions), 0.0));
  const Mask all(static_cast<std::size_t>(mdp.num_actions), 1);
  for (int ep = 0; ep < episodes; ++ep) {
    int s = mdp.start;
    for (int guard = 0; s >= 0 && guard < 10000; ++guard) {
      const auto& row = Q[static_cast<std::size_t>(s)];
      const int a = select_action(row, all, eps, rng);
      const double r = mdp.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      const int s2 = mdp.next[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      const double boot = s2 < 0 ? 0.0 : masked_max(Q[static_cast<std::size_t>(s2)], all);
      auto& q = Q[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      q += alpha * (r + gamma * boot - q);
      s = s2;
    }
  }
  return Q;
}

QTable value_iteration(const ToyMdp& mdp, double gamma, double tol) {
  QTable Q(static_cast<std::size_t>(mdp.num_states),
           std::vector<double>(static_cast<std::size_t>(mdp.num_actions), 0.0));
  const Mask all(static_cast<std::size_t>(mdp.num_actions), 1);
  for (int it = 0; it < 100000; ++it) {
    double change = 0.0;
    QTable next = Q;
    for (int s = 0; s < mdp.num_states; ++s) {
      for (int a = 0; a < mdp.num_actions; ++a) {
        const auto su = static_cast<std::size_t>(s), au = static_cast<std::size_t>(a);
        const int s2 = mdp.next[su][au];
        const double boot = s2 < 0 ? 0.0 : masked_max(Q[static_cast<std::size_t>(s2)], all);
        next[su][au] = mdp.reward[su][au] + gamma * boot;
        change = std::max(change, std::abs(next[su][au] - Q[su][au]));
      }
    }
    Q = std::move(next);
    if (change < tol) break;
  }
  return Q;
}

}  // namespace mealtwin
