#include "otgym/rl.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace otgym {

double q_target(double reward, std::span<const double> next_q, bool done, double gamma) {
  if (done) return reward;
  if (next_q.empty()) throw std::invalid_argument("q_target: next_q is empty");
  return reward + gamma * *std::max_element(next_q.begin(), next_q.end());
}

int argmax(std::span<const float> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty span");
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (items_.size() < capacity_) {
    items_.push_back(t);
  } else {
    items_[head_] = t;
  }
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("replay buffer index");
  // Before wrap-around head_ == size_ and the oldest item sits at 0.
  const std::size_t oldest = size_ < capacity_ ? 0 : head_;
  return items_[(oldest + i) % capacity_];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  if (size_ == 0) throw std::logic_error("sampling from an empty replay buffer");
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = static_cast<std::size_t>(rng.below(size_));
  return out;
}

void ReplayBuffer::clear() {
  items_.clear();
  head_ = 0;
  size_ = 0;
}

// ---------------------------------------------------------------------------
// MLP

template <typename T>
Mlp<T>::Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw std::invalid_argument("an MLP needs at least input and output sizes");
  for (int d : dims_) {
    if (d <= 0) throw std::invalid_argument("MLP layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    Layer layer;
    layer.in = dims_[l];
    layer.out = dims_[l + 1];
    layer.w.assign(static_cast<std::size_t>(layer.in) * layer.out, T(0));
    layer.b.assign(layer.out, T(0));
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
void Mlp<T>::initialize(Rng& rng) {
  for (auto& layer : layers_) {
    const double bound = std::sqrt(6.0 / layer.in);
    for (auto& w : layer.w) w = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    std::fill(layer.b.begin(), layer.b.end(), T(0));
  }
}

template <typename T>
std::size_t Mlp<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.w.size() + l.b.size();
  return n;
}

template <typename T>
std::vector<T> Mlp<T>::forward(std::span<const T> x) const {
  Cache scratch;
  return forward(x, scratch);
}

template <typename T>
std::vector<T> Mlp<T>::forward(std::span<const T> x, Cache& cache) const {
  if (static_cast<int>(x.size()) != input_size()) throw std::invalid_argument("MLP input size mismatch");
  cache.acts.resize(layers_.size() + 1);
  cache.acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const std::vector<T>& in = cache.acts[l];
    std::vector<T>& out = cache.acts[l + 1];
    out.resize(layer.out);
    const bool hidden = l + 1 < layers_.size();
    for (int o = 0; o < layer.out; ++o) {
      const T* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      T acc = layer.b[o];
      for (int i = 0; i < layer.in; ++i) acc += row[i] * in[i];
      out[o] = hidden && acc < T(0) ? T(0) : acc;
    }
  }
  return cache.acts.back();
}

template <typename T>
void Mlp<T>::backward(const Cache& cache, std::span<const T> grad_out, Mlp& grads) const {
  std::vector<T> delta(grad_out.begin(), grad_out.end());
  std::vector<T> prev;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    Layer& g = grads.layers_[l];
    const std::vector<T>& in = cache.acts[l];
    for (int o = 0; o < layer.out; ++o) {
      const T d = delta[o];
      if (d == T(0)) continue;
      g.b[o] += d;
      T* grow = g.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) grow[i] += d * in[i];
    }
    if (l == 0) break;
    prev.assign(layer.in, T(0));
    for (int o = 0; o < layer.out; ++o) {
      const T d = delta[o];
      if (d == T(0)) continue;
      const T* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) prev[i] += d * row[i];
    }
    // ReLU gate of the layer below; its output is stored in acts[l].
    for (int i = 0; i < layer.in; ++i) {
      if (in[i] <= T(0)) prev[i] = T(0);
    }
    delta.swap(prev);
  }
}

template <typename T>
void Mlp<T>::zero() {
  for (auto& l : layers_) {
    std::fill(l.w.begin(), l.w.end(), T(0));
    std::fill(l.b.begin(), l.b.end(), T(0));
  }
}

template <typename T>
std::vector<T> Mlp<T>::flatten() const {
  std::vector<T> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.w.begin(), l.w.end());
    out.insert(out.end(), l.b.begin(), l.b.end());
  }
  return out;
}

template <typename T>
void Mlp<T>::unflatten(std::span<const T> params) {
  if (params.size() != parameter_count()) throw std::invalid_argument("parameter count mismatch");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (auto& w : l.w) w = params[k++];
    for (auto& b : l.b) b = params[k++];
  }
}

template <typename T>
bool Mlp<T>::operator==(const Mlp& o) const {
  if (dims_ != o.dims_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].w != o.layers_[l].w || layers_[l].b != o.layers_[l].b) return false;
  }
  return true;
}

template class Mlp<float>;
template class Mlp<double>;

std::vector<float> q_values(const QNetwork& net, const StateVector& state) {
  return net.forward(std::span<const float>(state.data(), state.size()));
}

template <typename T>
T dqn_loss(const Mlp<T>& net, const Mlp<T>& target, std::span<const Transition> batch, double gamma,
           Mlp<T>* grads) {
  if (batch.empty()) throw std::invalid_argument("dqn_loss: empty batch");
  const T inv_n = T(1) / static_cast<T>(batch.size());
  T loss = T(0);
  typename Mlp<T>::Cache cache;
  std::vector<T> x(kStateSize), grad_out(net.output_size());
  std::vector<double> next_q(target.output_size());
  for (const Transition& t : batch) {
    double y = t.reward;
    if (!t.done) {
      for (int i = 0; i < kStateSize; ++i) x[i] = static_cast<T>(t.next_state[i]);
      const auto nq = target.forward(x);
      for (std::size_t i = 0; i < nq.size(); ++i) next_q[i] = static_cast<double>(nq[i]);
      y = q_target(t.reward, next_q, false, gamma);
    }
    for (int i = 0; i < kStateSize; ++i) x[i] = static_cast<T>(t.state[i]);
    const auto q = net.forward(x, cache);
    const T diff = q[t.action] - static_cast<T>(y);
    loss += diff * diff * inv_n;
    if (grads) {
      std::fill(grad_out.begin(), grad_out.end(), T(0));
      grad_out[t.action] = T(2) * diff * inv_n;
      net.backward(cache, grad_out, *grads);
    }
  }
  return loss;
}

template float dqn_loss<float>(const Mlp<float>&, const Mlp<float>&, std::span<const Transition>, double,
                               Mlp<float>*);
template double dqn_loss<double>(const Mlp<double>&, const Mlp<double>&, std::span<const Transition>, double,
                                 Mlp<double>*);

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const QNetwork& net, AdamConfig config)
    : config_(config), m_(net.parameter_count(), 0.0f), v_(net.parameter_count(), 0.0f) {}

void Adam::step(QNetwork& net, const QNetwork& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const float step = static_cast<float>(config_.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(config_.eps);
  std::size_t k = 0;
  auto update = [&](std::vector<float>& p, const std::vector<float>& g) {
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      m_[k] = b1 * m_[k] + (1.0f - b1) * g[i];
      v_[k] = b2 * v_[k] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step * m_[k] / (std::sqrt(v_[k] * inv_c2) + eps);
    }
  };
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    update(net.layers()[l].w, grads.layers()[l].w);
    update(net.layers()[l].b, grads.layers()[l].b);
  }
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (target_sync_steps <= 0) fail("target_sync_steps must be positive");
  if (episodes <= 0) fail("episodes must be positive");
  if (max_steps <= 0) fail("max_steps must be positive");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0)) {
    fail("epsilon bounds must lie in [0, 1]");
  }
  if (!(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0)) fail("epsilon_decay_fraction must lie in (0, 1]");
  if (buffer_capacity == 0) fail("buffer_capacity must be positive");
  for (int h : hidden) {
    if (h <= 0) fail("hidden sizes must be positive");
  }
  if (learning_starts < 0) fail("learning_starts must be non-negative");
  if (eval_every < 0 || eval_episodes < 0) fail("eval settings must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"gamma", c.gamma},
          {"batch_size", c.batch_size},
          {"target_sync_steps", c.target_sync_steps},
          {"episodes", c.episodes},
          {"max_steps", c.max_steps},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_decay_fraction", c.epsilon_decay_fraction},
          {"buffer_capacity", c.buffer_capacity},
          {"hidden", c.hidden},
          {"learning_starts", c.learning_starts},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "learning_rate") c.learning_rate = v.get<double>();
    else if (k == "gamma") c.gamma = v.get<double>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "target_sync_steps") c.target_sync_steps = v.get<int>();
    else if (k == "episodes") c.episodes = v.get<int>();
    else if (k == "max_steps") c.max_steps = v.get<int>();
    else if (k == "epsilon_start") c.epsilon_start = v.get<double>();
    else if (k == "epsilon_end") c.epsilon_end = v.get<double>();
    else if (k == "epsilon_decay_fraction") c.epsilon_decay_fraction = v.get<double>();
    else if (k == "buffer_capacity") c.buffer_capacity = v.get<std::size_t>();
    else if (k == "hidden") c.hidden = v.get<std::vector<int>>();
    else if (k == "learning_starts") c.learning_starts = v.get<int>();
    else if (k == "eval_every") c.eval_every = v.get<int>();
    else if (k == "eval_episodes") c.eval_episodes = v.get<int>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("train config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

double epsilon_at(int episode, const TrainConfig& c) {
  const double decay_episodes = c.epsilon_decay_fraction * c.episodes;
  const double frac = decay_episodes > 0.0 ? std::clamp(episode / decay_episodes, 0.0, 1.0) : 1.0;
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac;
}

// ---------------------------------------------------------------------------
// Learner

namespace {

std::vector<int> network_dims(const TrainConfig& c) {
  std::vector<int> dims{kStateSize};
  dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
  dims.push_back(kNumSpeedLevels);
  return dims;
}

}  // namespace

DqnLearner::DqnLearner(const TrainConfig& config, Rng init_rng) : config_(config), online_(network_dims(config)) {
  config_.validate();
  online_.initialize(init_rng);
  target_ = online_;
  adam_ = Adam(online_, AdamConfig{config_.learning_rate});
}

std::optional<double> DqnLearner::train_step(const ReplayBuffer& buffer, Rng& rng) {
  const auto batch_size = static_cast<std::size_t>(config_.batch_size);
  if (buffer.size() < batch_size) return std::nullopt;
  std::vector<Transition> batch;
  batch.reserve(batch_size);
  for (std::size_t i : buffer.sample_indices(batch_size, rng)) batch.push_back(buffer.at(i));

  QNetwork grads(online_.dims());
  const float loss = dqn_loss<float>(online_, target_, batch, config_.gamma, &grads);
  adam_.step(online_, grads);
  ++gradient_steps_;
  if (gradient_steps_ % static_cast<std::uint64_t>(config_.target_sync_steps) == 0) sync_target();
  return static_cast<double>(loss);
}

int select_action(const QNetwork& net, const StateVector& state, double epsilon, Rng& rng) {
  // The uniform draw is always consumed so the exploration stream advances at a
  // fixed rate regardless of the greedy outcome.
  const double u = rng.uniform();
  if (u < epsilon) return static_cast<int>(rng.below(kNumSpeedLevels));
  return argmax(q_values(net, state));
}

ConstantSpeedPolicy::ConstantSpeedPolicy(int level) : level_(level) {
  if (level < 0 || level >= kNumSpeedLevels) throw std::invalid_argument("speed level out of range");
}

std::string ConstantSpeedPolicy::name() const { return "constant_" + std::to_string(level_); }

// ---------------------------------------------------------------------------
// Episodes

nlohmann::json to_json(const EpisodeResult& r, bool include_traces) {
  nlohmann::json j = {{"seed", r.seed},
                      {"success", r.success},
                      {"termination", to_string(r.termination)},
                      {"completion_time", r.completion_time},
                      {"cumulative_reward", r.cumulative_reward},
                      {"decisions", r.decisions},
                      {"actions", r.actions}};
  j["failure"] = r.failure ? nlohmann::json(to_string(*r.failure)) : nlohmann::json(nullptr);
  if (include_traces) {
    j["contact_force"] = r.trace.contact_force;
    j["trap_distance"] = r.trace.trap_distance;
  }
  return j;
}

EpisodeResult run_episode(TransportEpisode& episode, std::uint64_t seed, SpeedPolicy& policy, Rng& policy_rng,
                          const TransitionSink& sink) {
  episode.reset(seed);
  EpisodeResult result;
  result.seed = seed;
  const int interval = episode.config().decision_interval;
  const int limit = episode.config().max_decisions;

  int level = 0;
  StateVector state = episode.observe(level);
  while (!episode.done() && result.decisions < limit) {
    level = policy.act(state, policy_rng);
    if (level < 0 || level >= kNumSpeedLevels) throw std::out_of_range("policy returned an invalid speed level");
    for (int t = 0; t < interval && !episode.done(); ++t) episode.tick_along_path(kSpeedLevels[level]);
    const RewardBreakdown reward = compute_reward(episode.take_interval_outcome(level), episode.config().reward);
    ++result.decisions;
    result.actions.push_back(level);
    result.cumulative_reward += reward.total;

    const StateVector next = episode.observe(level);
    if (sink) {
      // Completion and failures end the return; a time or step limit does not.
      const bool terminal = reward.done || episode.termination() == Termination::Completed;
      sink(Transition{state, level, static_cast<float>(reward.total), next, terminal});
    }
    state = next;
  }
  result.termination = episode.done() ? episode.termination() : Termination::TimeLimit;
  result.success = episode.success();
  if (episode.world().failure) result.failure = episode.world().failure->kind;
  result.completion_time = episode.time();
  result.trace = episode.trace();
  return result;
}

// ---------------------------------------------------------------------------
// Training and evaluation

namespace {

constexpr std::uint64_t kTrainTag = 0x7472'0000'0000'0000ULL;
constexpr std::uint64_t kEvalTag = 0x6576'0000'0000'0000ULL;
constexpr std::uint64_t kSelectTag = 0x7365'0000'0000'0000ULL;

std::uint64_t tagged_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index) {
  return mix64(mix64(base) ^ tag ^ index);
}

struct GreedyScore {
  double success_rate = 0.0;
  double mean_time = 0.0;
  double score() const { return 1000.0 * success_rate - mean_time; }
};

GreedyScore score_greedy(const QNetwork& net, TransportEpisode& episode, std::uint64_t master, int n) {
  QPolicy policy(net, 0.0);
  Rng unused(master, Stream::Exploration);
  GreedyScore s;
  double time_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto r = run_episode(episode, tagged_seed(master, kSelectTag, i), policy, unused);
    if (r.success) s.success_rate += 1.0;
    // Failed runs count at the full time budget so they never look fast.
    time_sum += r.success ? r.completion_time : episode.max_time();
  }
  s.success_rate /= n;
  s.mean_time = time_sum / n;
  return s;
}

}  // namespace

std::uint64_t training_episode_seed(std::uint64_t master, int episode) {
  return tagged_seed(master, kTrainTag, static_cast<std::uint64_t>(episode));
}

std::uint64_t evaluation_seed(std::uint64_t base, int index) {
  return tagged_seed(base, kEvalTag, static_cast<std::uint64_t>(index));
}

TrainResult train(const Scenario& scenario, const SmoothPath& path, const TrainConfig& config,
                  const EnvConfig& env_config, const TrainProgress& progress) {
  config.validate();
  EnvConfig env = env_config;
  env.max_decisions = config.max_steps;
  env.record_traces = false;
  TransportEpisode episode(scenario, path, env);
  TransportEpisode probe(scenario, path, env);

  Rng init_rng(config.seed, Stream::NetworkInit);
  Rng explore_rng(config.seed, Stream::Exploration);
  Rng replay_rng(config.seed, Stream::ReplaySampling);
  DqnLearner learner(config, init_rng);
  ReplayBuffer buffer(config.buffer_capacity);
  QPolicy policy(learner.online(), config.epsilon_start, "rl");

  TrainResult result;
  result.best_net = learner.online();
  double best = -std::numeric_limits<double>::infinity();
  auto consider = [&](int ep) {
    if (config.eval_episodes <= 0) return;
    const double s = score_greedy(learner.online(), probe, config.seed, config.eval_episodes).score();
    if (s > best) {
      best = s;
      result.best_net = learner.online();
      result.best_episode = ep;
      result.best_score = s;
    }
  };

  double loss_sum = 0.0;
  int loss_n = 0;
  auto sink = [&](const Transition& t) {
    buffer.push(t);
    if (buffer.size() < static_cast<std::size_t>(std::max(config.learning_starts, config.batch_size))) return;
    if (auto loss = learner.train_step(buffer, replay_rng)) {
      loss_sum += *loss;
      ++loss_n;
    }
  };

  for (int ep = 0; ep < config.episodes; ++ep) {
    const double eps = epsilon_at(ep, config);
    policy.set_epsilon(eps);
    loss_sum = 0.0;
    loss_n = 0;
    const auto r = run_episode(episode, training_episode_seed(config.seed, ep), policy, explore_rng, sink);
    result.learning_curve.push_back(r.cumulative_reward);
    result.episode_success.push_back(r.success ? 1 : 0);
    result.episode_epsilon.push_back(eps);
    result.mean_loss.push_back(loss_n ? loss_sum / loss_n : std::numeric_limits<double>::quiet_NaN());
    if (progress) progress(ep, r, eps);
    if (config.eval_every > 0 && (ep + 1) % config.eval_every == 0) consider(ep);
  }
  if (config.eval_every <= 0 || config.episodes % config.eval_every != 0) consider(config.episodes - 1);
  result.final_net = learner.online();
  if (result.best_episode < 0) {
    result.best_net = result.final_net;
    result.best_episode = config.episodes - 1;
  }
  return result;
}

nlohmann::json to_json(const EvaluationReport& r, bool include_episodes) {
  nlohmann::json j = {{"policy", r.policy},
                      {"episodes_run", r.episodes.size()},
                      {"success_rate", r.success_rate},
                      {"mean_reward", r.mean_reward},
                      {"force_within_damage", r.force_within_damage},
                      {"distance_within_bound", r.distance_within_bound}};
  j["mean_time"] = std::isnan(r.mean_time) ? nlohmann::json(nullptr) : nlohmann::json(r.mean_time);
  if (include_episodes) {
    j["episodes"] = nlohmann::json::array();
    for (const auto& e : r.episodes) j["episodes"].push_back(to_json(e));
  }
  return j;
}

EvaluationReport evaluate(SpeedPolicy& policy, const Scenario& scenario, const SmoothPath& path,
                          std::span<const std::uint64_t> seeds, const EnvConfig& env_config,
                          std::uint64_t policy_seed) {
  if (seeds.empty()) throw std::invalid_argument("evaluate: at least one episode is required");
  EnvConfig env = env_config;
  env.record_traces = true;
  TransportEpisode episode(scenario, path, env);
  Rng rng(policy_seed, Stream::Exploration);

  EvaluationReport rep;
  rep.policy = policy.name();
  std::size_t ticks = 0, force_ok = 0, dist_ok = 0, successes = 0;
  double time_sum = 0.0, reward_sum = 0.0;
  const double f_damage = scenario.config.f_damage;
  const double bound = scenario.config.deviation_bound;
  for (std::uint64_t seed : seeds) {
    auto r = run_episode(episode, seed, policy, rng);
    for (float f : r.trace.contact_force) force_ok += f <= f_damage ? 1 : 0;
    for (float d : r.trace.trap_distance) dist_ok += d <= bound ? 1 : 0;
    ticks += r.trace.trap_distance.size();
    if (r.success) {
      ++successes;
      time_sum += r.completion_time;
    }
    reward_sum += r.cumulative_reward;
    rep.episodes.push_back(std::move(r));
  }
  const double n = static_cast<double>(seeds.size());
  rep.success_rate = successes / n;
  rep.mean_time = successes ? time_sum / successes : std::numeric_limits<double>::quiet_NaN();
  rep.mean_reward = reward_sum / n;
  rep.force_within_damage = ticks ? static_cast<double>(force_ok) / ticks : 1.0;
  rep.distance_within_bound = ticks ? static_cast<double>(dist_ok) / ticks : 1.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'O', 'T', 'G', 'Y', 'M', 'Q', '1', '\n'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const QNetwork& net, const nlohmann::json& meta) {
  nlohmann::json header = meta.is_object() ? meta : nlohmann::json::object();
  header["dims"] = net.dims();
  header["format"] = "otgym-qnet";
  header["version"] = 1;
  const std::string text = header.dump();
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + file.string());
  os.write(kMagic, sizeof kMagic);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (float p : net.flatten()) put_u32(os, std::bit_cast<std::uint32_t>(p));
  if (!os) throw std::runtime_error("failed writing checkpoint " + file.string());
}

QNetwork load_checkpoint(const std::filesystem::path& file, nlohmann::json* meta) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + file.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("not a Q-network checkpoint: " + file.string());
  }
  const std::uint32_t len = get_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw std::runtime_error("checkpoint truncated");
  const auto header = nlohmann::json::parse(text);
  const auto dims = header.at("dims").get<std::vector<int>>();
  if (dims.size() < 2 || dims.front() != kStateSize || dims.back() != kNumSpeedLevels) {
    throw std::runtime_error("checkpoint network shape does not match the state/action sizes");
  }
  QNetwork net(dims);
  std::vector<float> params(net.parameter_count());
  for (auto& p : params) p = std::bit_cast<float>(get_u32(is));
  net.unflatten(params);
  if (meta) *meta = header;
  return net;
}

}  // namespace otgym
