#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "otgym/rl.hpp"

using namespace otgym;

namespace {

Transition random_transition(Rng& rng, bool done) {
  Transition t;
  for (auto& v : t.state) v = static_cast<float>(rng.uniform() * 2 - 1);
  for (auto& v : t.next_state) v = static_cast<float>(rng.uniform() * 2 - 1);
  t.action = static_cast<int>(rng.below(kNumSpeedLevels));
  t.reward = static_cast<float>(rng.uniform() - 0.5);
  t.done = done;
  return t;
}

Mlp<double> random_net(std::uint64_t seed) {
  Mlp<double> net({kStateSize, 8, 8, kNumSpeedLevels});
  Rng rng(seed, Stream::NetworkInit);
  net.initialize(rng);
  // Non-zero biases so every unit is exercised.
  for (auto& layer : net.layers())
    for (auto& b : layer.b) b = 0.1 * (rng.uniform() - 0.3);
  return net;
}

}  // namespace

TEST_CASE("Bellman target by hand") {
  const std::vector<double> next = {0.5, 2.0, -1.0};
  CHECK(q_target(1.0, next, false, 0.9) == doctest::Approx(1.0 + 0.9 * 2.0));
  CHECK(q_target(1.0, next, true, 0.9) == 1.0);
  CHECK(q_target(-0.25, next, false, 0.0) == -0.25);
  CHECK_THROWS(q_target(0.0, std::vector<double>{}, false, 0.9));
}

TEST_CASE("argmax picks the first of tied maxima") {
  const std::vector<float> v = {1.0f, 3.0f, 3.0f, 2.0f};
  CHECK(argmax(v) == 1);
  const std::vector<float> z(6, 0.0f);
  CHECK(argmax(z) == 0);
}

TEST_CASE("forward pass of a hand-set network") {
  Mlp<double> net({2, 2, 1});
  net.layers()[0].w = {1.0, -1.0, 0.5, 2.0};
  net.layers()[0].b = {0.0, -1.0};
  net.layers()[1].w = {3.0, 1.0};
  net.layers()[1].b = {0.5};
  // hidden = relu([1 - 2, 0.5 + 4 - 1]) = [0, 3.5]; out = 3.5 + 0.5
  const std::vector<double> x = {1.0, 2.0};
  CHECK(net.forward(x)[0] == doctest::Approx(4.0));
  CHECK(net.parameter_count() == 9);
  const auto flat = net.flatten();
  Mlp<double> copy({2, 2, 1});
  copy.unflatten(flat);
  CHECK(copy == net);
}

TEST_CASE("DQN loss gradient matches central finite differences") {
  const Mlp<double> net = random_net(1), target = random_net(2);
  Rng rng(3, Stream::Scenario);
  std::vector<Transition> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_transition(rng, i % 3 == 0));
  const double gamma = 0.95;

  Mlp<double> grads(net.dims());
  grads.zero();
  const double loss = dqn_loss(net, target, batch, gamma, &grads);
  CHECK(std::isfinite(loss));

  // Loss by hand for the first sample, to pin the definition.
  {
    const Transition& t = batch[0];
    const std::vector<double> s(t.state.begin(), t.state.end()), s2(t.next_state.begin(), t.next_state.end());
    const auto q = net.forward(s), q2 = target.forward(s2);
    const double y = q_target(t.reward, q2, t.done, gamma);
    const double single = dqn_loss<double>(net, target, std::span<const Transition>(batch.data(), 1), gamma, nullptr);
    CHECK(single == doctest::Approx((q[t.action] - y) * (q[t.action] - y)).epsilon(1e-12));
  }

  const auto p = net.flatten(), g = grads.flatten();
  Mlp<double> probe = net;
  const double h = 1e-6;
  int checked = 0, bad = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto q = p;
    q[i] = p[i] + h;
    probe.unflatten(q);
    const double up = dqn_loss<double>(probe, target, batch, gamma, nullptr);
    q[i] = p[i] - h;
    probe.unflatten(q);
    const double down = dqn_loss<double>(probe, target, batch, gamma, nullptr);
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-3});
    if (std::abs(fd - g[i]) > 1e-4 * scale) ++bad;
    ++checked;
  }
  CHECK(checked == static_cast<int>(p.size()));
  CHECK(bad == 0);
}

TEST_CASE("replay buffer evicts the oldest and samples uniformly") {
  ReplayBuffer buf(10);
  Rng rng(4, Stream::Scenario);
  for (int i = 0; i < 25; ++i) {
    Transition t = random_transition(rng, false);
    t.action = i % kNumSpeedLevels;
    t.reward = static_cast<float>(i);
    buf.push(t);
  }
  CHECK(buf.size() == 10);
  CHECK(buf.at(0).reward == 15.0f);
  CHECK(buf.at(9).reward == 24.0f);
  CHECK_THROWS(buf.at(10));

  std::vector<int> counts(10, 0);
  const int n = 100000;
  Rng srng(5, Stream::Exploration);
  for (std::size_t idx : buf.sample_indices(n, srng)) ++counts.at(idx);
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  CHECK(chi2 < 27.88);  // 9 dof, p = 0.001
  buf.clear();
  CHECK(buf.size() == 0);
  CHECK_THROWS(buf.sample_indices(1, srng));
}

TEST_CASE("epsilon schedule decays linearly then holds") {
  TrainConfig c;
  c.episodes = 100;
  c.epsilon_start = 1.0;
  c.epsilon_end = 0.1;
  c.epsilon_decay_fraction = 0.5;
  CHECK(epsilon_at(0, c) == 1.0);
  CHECK(epsilon_at(25, c) == doctest::Approx(0.55));
  CHECK(epsilon_at(50, c) == doctest::Approx(0.1));
  CHECK(epsilon_at(99, c) == doctest::Approx(0.1));
}

TEST_CASE("greedy and exploratory action selection") {
  QNetwork net({kStateSize, kNumSpeedLevels});
  net.zero();
  net.layers()[0].b[4] = 1.0f;
  StateVector s{};
  Rng rng(6, Stream::Exploration);
  for (int i = 0; i < 50; ++i) CHECK(select_action(net, s, 0.0, rng) == 4);
  std::vector<int> seen(kNumSpeedLevels, 0);
  for (int i = 0; i < 3000; ++i) ++seen[select_action(net, s, 1.0, rng)];
  for (int c : seen) CHECK(c > 300);
}

TEST_CASE("Adam update by hand") {
  QNetwork net({1, 1});
  net.layers()[0].w = {1.0f};
  net.layers()[0].b = {0.0f};
  QNetwork g({1, 1});
  g.layers()[0].w = {0.5f};
  g.layers()[0].b = {-2.0f};
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam adam(net, cfg);
  adam.step(net, g);
  // First step: bias-corrected moments are g and g^2, so the step is lr * sign(g).
  CHECK(net.layers()[0].w[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(net.layers()[0].b[0] == doctest::Approx(0.01).epsilon(1e-6));
  g.layers()[0].w = {-1.0f};
  adam.step(net, g);
  const double m = 0.9 * 0.05 + 0.1 * -1.0, v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(net.layers()[0].w[0] == doctest::Approx(0.99 - 0.01 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-6));
  CHECK(adam.steps() == 2);
}

TEST_CASE("checkpoint round-trip and corruption") {
  QNetwork net({kStateSize, 64, 64, kNumSpeedLevels});
  Rng rng(7, Stream::NetworkInit);
  net.initialize(rng);
  const auto file = std::filesystem::temp_directory_path() / "otgym_test.ckpt";
  save_checkpoint(file, net, {{"episode", 12}});
  nlohmann::json meta;
  const QNetwork back = load_checkpoint(file, &meta);
  CHECK(back == net);
  CHECK(meta["episode"] == 12);
  CHECK(meta["dims"] == nlohmann::json({kStateSize, 64, 64, kNumSpeedLevels}));
  {
    std::ifstream is(file, std::ios::binary);
    char magic[8];
    is.read(magic, 8);
    CHECK(std::string(magic, 8) == "OTGYMQ1\n");
  }
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 4);
  CHECK_THROWS(load_checkpoint(file));
  {
    std::ofstream os(file, std::ios::binary);
    os << "garbage!";
  }
  CHECK_THROWS(load_checkpoint(file));
  std::filesystem::remove(file);
}

TEST_CASE("train config validation and JSON round-trip") {
  TrainConfig c;
  c.episodes = 7;
  c.hidden = {32};
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(back.episodes == 7);
  CHECK(back.hidden == std::vector<int>{32});
  CHECK_THROWS(train_config_from_json({{"episode", 5}}));
  c.gamma = 1.5;
  CHECK_THROWS(c.validate());
}
