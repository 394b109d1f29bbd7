#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "otgym/env.hpp"
#include "otgym/rng.hpp"

namespace otgym {

/// Bellman target: reward + gamma * max(next_q), or reward alone when terminal.
double q_target(double reward, std::span<const double> next_q, bool done, double gamma);

/// Index of the largest value; the lowest index wins exact ties.
int argmax(std::span<const float> values);

struct Transition {
  StateVector state{};
  int action = 0;
  float reward = 0.0f;
  StateVector next_state{};
  bool done = false;
};

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  /// i-th stored transition, 0 = oldest.
  const Transition& at(std::size_t i) const;
  /// Uniform sample with replacement; returns indices into at().
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;
  void clear();

 private:
  std::vector<Transition> items_;
  std::size_t capacity_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
};

/// Fully connected network with ReLU hidden layers and a linear output layer.
/// Weights are stored row-major (out x in) per layer.
template <typename T>
class Mlp {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    std::vector<T> w;  // out * in
    std::vector<T> b;  // out
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> dims);

  /// He-uniform initialization from the given stream.
  void initialize(Rng& rng);

  const std::vector<int>& dims() const { return dims_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  int input_size() const { return dims_.front(); }
  int output_size() const { return dims_.back(); }
  std::size_t parameter_count() const;

  std::vector<T> forward(std::span<const T> x) const;

  /// Activations kept for backpropagation; acts[0] is the input.
  struct Cache {
    std::vector<std::vector<T>> acts;
  };
  std::vector<T> forward(std::span<const T> x, Cache& cache) const;

  /// Accumulates parameter gradients given dLoss/dOutput for one sample.
  void backward(const Cache& cache, std::span<const T> grad_out, Mlp& grads) const;

  void zero();
  /// Flattened view order: for each layer, w then b.
  std::vector<T> flatten() const;
  void unflatten(std::span<const T> params);

  template <typename U>
  Mlp<U> cast() const {
    Mlp<U> out(dims_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      for (std::size_t i = 0; i < layers_[l].w.size(); ++i) out.layers()[l].w[i] = static_cast<U>(layers_[l].w[i]);
      for (std::size_t i = 0; i < layers_[l].b.size(); ++i) out.layers()[l].b[i] = static_cast<U>(layers_[l].b[i]);
    }
    return out;
  }

  bool operator==(const Mlp&) const;

 private:
  std::vector<int> dims_;
  std::vector<Layer> layers_;
};

extern template class Mlp<float>;
extern template class Mlp<double>;

using QNetwork = Mlp<float>;

std::vector<float> q_values(const QNetwork& net, const StateVector& state);

/// Mean over the batch of (Q(s, a) - y)^2 with y from `target`. When `grads` is
/// non-null, the gradient of that loss with respect to `net` is accumulated.
template <typename T>
T dqn_loss(const Mlp<T>& net, const Mlp<T>& target, std::span<const Transition> batch, double gamma,
           Mlp<T>* grads);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const QNetwork& net, AdamConfig config);
  void step(QNetwork& net, const QNetwork& grads);
  std::uint64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<float> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double gamma = 0.99;
  int batch_size = 64;
  int target_sync_steps = 500;
  int episodes = 1000;
  int max_steps = 200;  // decisions per episode
  double epsilon_start = 1.0;
  double epsilon_end = 0.01;
  double epsilon_decay_fraction = 0.8;
  std::size_t buffer_capacity = 50000;
  std::vector<int> hidden = {64, 64};
  int learning_starts = 64;     // transitions before the first update
  int eval_every = 50;          // episodes between greedy checkpoint evaluations
  int eval_episodes = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Linear decay over the first epsilon_decay_fraction of episodes, then flat.
double epsilon_at(int episode, const TrainConfig& config);

class DqnLearner {
 public:
  DqnLearner(const TrainConfig& config, Rng init_rng);

  const QNetwork& online() const { return online_; }
  QNetwork& online() { return online_; }
  const QNetwork& target() const { return target_; }
  std::uint64_t gradient_steps() const { return gradient_steps_; }
  const TrainConfig& config() const { return config_; }

  /// One gradient step on a uniformly sampled batch. Returns the loss before the
  /// step, or nothing when the buffer holds fewer than batch_size transitions.
  std::optional<double> train_step(const ReplayBuffer& buffer, Rng& rng);
  void sync_target() { target_ = online_; }

 private:
  TrainConfig config_;
  QNetwork online_;
  QNetwork target_;
  Adam adam_;
  std::uint64_t gradient_steps_ = 0;
};

int select_action(const QNetwork& net, const StateVector& state, double epsilon, Rng& rng);

/// Chooses a speed level from the observed state.
class SpeedPolicy {
 public:
  virtual ~SpeedPolicy() = default;
  virtual int act(const StateVector& state, Rng& rng) = 0;
  virtual std::string name() const = 0;
};

class ConstantSpeedPolicy : public SpeedPolicy {
 public:
  explicit ConstantSpeedPolicy(int level);
  int act(const StateVector&, Rng&) override { return level_; }
  std::string name() const override;

 private:
  int level_;
};

class QPolicy : public SpeedPolicy {
 public:
  QPolicy(const QNetwork& net, double epsilon = 0.0, std::string label = "rl")
      : net_(&net), epsilon_(epsilon), label_(std::move(label)) {}
  int act(const StateVector& state, Rng& rng) override { return select_action(*net_, state, epsilon_, rng); }
  std::string name() const override { return label_; }
  void set_epsilon(double e) { epsilon_ = e; }

 private:
  const QNetwork* net_;
  double epsilon_;
  std::string label_;
};

/// Uniformly random speed levels.
class RandomPolicy : public SpeedPolicy {
 public:
  int act(const StateVector&, Rng& rng) override { return static_cast<int>(rng.below(kNumSpeedLevels)); }
  std::string name() const override { return "random"; }
};

struct EpisodeResult {
  std::uint64_t seed = 0;
  bool success = false;
  Termination termination = Termination::None;
  std::optional<FailureKind> failure;
  double completion_time = 0.0;  // s, sim time at termination
  double cumulative_reward = 0.0;
  int decisions = 0;
  std::vector<int> actions;
  SafetyTrace trace;
};

nlohmann::json to_json(const EpisodeResult& r, bool include_traces = false);

using TransitionSink = std::function<void(const Transition&)>;

/// Runs one episode: every decision interval the policy picks a speed level, the
/// reference advances along the path at that speed for the interval's ticks, and
/// the interval is scored with compute_reward. Truncation at the step limit is not
/// marked terminal in the emitted transitions.
EpisodeResult run_episode(TransportEpisode& episode, std::uint64_t seed, SpeedPolicy& policy, Rng& policy_rng,
                          const TransitionSink& sink = {});

struct TrainResult {
  QNetwork final_net;
  QNetwork best_net;
  int best_episode = -1;
  double best_score = 0.0;
  std::vector<double> learning_curve;  // cumulative reward per episode
  std::vector<int> episode_success;
  std::vector<double> episode_epsilon;
  std::vector<double> mean_loss;       // per episode, NaN before learning starts
};

using TrainProgress = std::function<void(int episode, const EpisodeResult&, double epsilon)>;

/// World seed used for training episode i under a master seed.
std::uint64_t training_episode_seed(std::uint64_t master, int episode);
/// Seeds used for evaluation runs; disjoint from training seeds by stream.
std::uint64_t evaluation_seed(std::uint64_t base, int index);

TrainResult train(const Scenario& scenario, const SmoothPath& path, const TrainConfig& config,
                  const EnvConfig& env_config = {}, const TrainProgress& progress = {});

struct EvaluationReport {
  std::string policy;
  std::vector<EpisodeResult> episodes;
  double success_rate = 0.0;
  double mean_time = 0.0;  // over successful episodes; NaN when none
  double mean_reward = 0.0;
  /// Fractions of recorded ticks inside the safety limits.
  double force_within_damage = 0.0;   // contact <= f_damage
  double distance_within_bound = 0.0; // trap distance <= deviation bound
};

nlohmann::json to_json(const EvaluationReport& r, bool include_episodes = true);

EvaluationReport evaluate(SpeedPolicy& policy, const Scenario& scenario, const SmoothPath& path,
                          std::span<const std::uint64_t> seeds, const EnvConfig& env_config = {},
                          std::uint64_t policy_seed = 0);

/// Checkpoint file: 8-byte magic "OTGYMQ1\n", u32 little-endian header length,
/// a JSON header {"dims": [...], "train_config": {...}, ...}, then every layer's
/// weights (row-major, out x in) followed by its biases as little-endian float32.
void save_checkpoint(const std::filesystem::path& file, const QNetwork& net, const nlohmann::json& meta);
QNetwork load_checkpoint(const std::filesystem::path& file, nlohmann::json* meta = nullptr);

}  // namespace otgym
