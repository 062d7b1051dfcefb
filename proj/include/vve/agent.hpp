#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "vve/net.hpp"
#include "vve/observation.hpp"
#include "vve/replay.hpp"
#include "vve/world.hpp"

namespace vve {

/// Linear exploration schedule: eps_start at step 0, eps_end from
/// eps_horizon onwards.
inline double epsilon_at(std::uint64_t step, const AgentParams& p) {
  if (step >= p.eps_horizon) return p.eps_end;
  const double frac =
      static_cast<double>(step) / static_cast<double>(p.eps_horizon);
  return p.eps_start + (p.eps_end - p.eps_start) * frac;
}

/// Occupied-cell indices of a grid (sparse encoding used everywhere the
/// grid feeds the network or the replay buffer).
inline std::vector<std::uint16_t> grid_indices(const OccupancyGrid& g) {
  std::vector<std::uint16_t> idx;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (g.data[i]) idx.push_back(static_cast<std::uint16_t>(i));
  return idx;
}

inline Eigen::VectorXd feats_vector(const std::vector<double>& f) {
  return Eigen::Map<const Eigen::VectorXd>(f.data(),
                                           static_cast<Eigen::Index>(f.size()));
}

/// Index of the maximum entry; ties resolve to the lowest index.
inline int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

inline int greedy_action(const QNetwork& net, const Observation& obs) {
  return argmax(net.forward_one(grid_indices(obs.grid),
                                feats_vector(obs.feats)));
}

/// Epsilon-greedy behavior policy.
inline int select_action(const QNetwork& net, const Observation& obs,
                         double eps, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < eps) {
    std::uniform_int_distribution<int> pick(0, net.spec().actions - 1);
    return pick(rng);
  }
  return greedy_action(net, obs);
}

/// Target value for one transition: the online network chooses the next
/// action, the target network evaluates it.  Terminal transitions take
/// the immediate reward only.
inline double ddqn_target(double reward, bool terminal, double gamma,
                          const Eigen::VectorXd& q_next_online,
                          const Eigen::VectorXd& q_next_target) {
  if (terminal) return reward;
  return reward + gamma * q_next_target(argmax(q_next_online));
}

/// One gradient update on a uniformly sampled minibatch.
/// Returns the minibatch MSE loss, or nothing if the buffer is too small.
inline std::optional<double> train_step(QNetwork& online,
                                        const QNetwork& target,
                                        const ReplayBuffer& buffer,
                                        const AgentParams& ap,
                                        SgdMomentum& opt,
                                        std::mt19937_64& rng) {
  const std::size_t batch = static_cast<std::size_t>(ap.batch_size);
  if (buffer.size() < batch) return std::nullopt;
  const auto idx = buffer.sample_indices(batch, rng);

  const int fdim = online.spec().fusion_dim;
  BatchInput cur, nxt;
  cur.grid_idx.resize(batch);
  nxt.grid_idx.resize(batch);
  cur.feats.resize(fdim, static_cast<Eigen::Index>(batch));
  nxt.feats.resize(fdim, static_cast<Eigen::Index>(batch));
  Eigen::VectorXd rewards(batch);
  std::vector<bool> terminals(batch);
  std::vector<int> actions(batch);
  for (std::size_t j = 0; j < batch; ++j) {
    const Transition& t = buffer[idx[j]];
    cur.grid_idx[j] = t.grid;
    nxt.grid_idx[j] = t.next_grid;
    cur.feats.col(static_cast<Eigen::Index>(j)) = feats_vector(t.feats);
    nxt.feats.col(static_cast<Eigen::Index>(j)) = feats_vector(t.next_feats);
    rewards(static_cast<Eigen::Index>(j)) = t.reward;
    terminals[j] = t.terminal;
    actions[j] = t.action;
  }

  const Eigen::MatrixXd q_next_online = online.forward(nxt, nullptr);
  const Eigen::MatrixXd q_next_target = target.forward(nxt, nullptr);

  ForwardCache cache;
  const Eigen::MatrixXd q = online.forward(cur, &cache);

  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t j = 0; j < batch; ++j) {
    const auto jc = static_cast<Eigen::Index>(j);
    double y = rewards(jc);
    if (!terminals[j]) {
      int a_star = 0;
      for (int i = 1; i < q_next_online.rows(); ++i)
        if (q_next_online(i, jc) > q_next_online(a_star, jc)) a_star = i;
      y += ap.gamma * q_next_target(a_star, jc);
    }
    const double err = q(actions[j], jc) - y;
    loss += err * err * inv_b;
    dq(actions[j], jc) = 2.0 * err * inv_b;
  }

  NetGrads grads = online.backward(cur, cache, dq);
  opt.apply(online, grads);
  return loss;
}

/// One row of the per-episode training log.
struct EpisodeStats {
  int episode = 0;
  double total_reward = 0.0;
  double mean_step_reward = 0.0;
  int steps = 0;
  double epsilon = 0.0;
  double loss_mean = 0.0;
  int collisions = 0;
  Terminal terminal = Terminal::kNone;
  bool faulted = false;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the pair, for decorrelated per-stream seeds.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct TrainResultData {
  QNetwork net;
  std::vector<EpisodeStats> episodes;
  std::uint64_t global_steps = 0;
};

/// Full training loop: episodes of interaction, epsilon-greedy behavior,
/// uniform replay, periodic minibatch updates, and periodic target-network
/// synchronization.  A simulation fault aborts the episode (logged) and
/// training continues with the next one.
inline TrainResultData
train_agent(const Config& cfg, std::uint64_t seed,
            const std::function<void(const EpisodeStats&)>& on_episode = {}) {
  const AgentParams& ap = cfg.agent;
  NetworkSpec spec;
  spec.grid_dim = ap.grid_rows * ap.grid_cols;
  spec.fusion_dim = fusion_feature_count(cfg.scenario.ped_count);
  QNetwork online(spec);
  online.init(mix_seed(seed, 0));
  QNetwork target = online;
  SgdMomentum opt(ap.lr, ap.momentum, ap.grad_clip);
  ReplayBuffer buffer(ap.buffer_capacity);
  std::mt19937_64 rng_explore(mix_seed(seed, 1));
  std::mt19937_64 rng_sample(mix_seed(seed, 2));

  constexpr std::size_t kWarmupTransitions = 1000;
  const std::size_t warmup =
      std::max<std::size_t>(static_cast<std::size_t>(ap.batch_size),
                            std::min<std::size_t>(kWarmupTransitions,
                                                  ap.buffer_capacity));

  World world(cfg);
  TrainResultData out;
  std::uint64_t global_step = 0;

  for (int ep = 1; ep <= ap.episodes; ++ep) {
    Observation obs = world.reset(mix_seed(seed, 100 + ep));
    EpisodeStats stats;
    stats.episode = ep;
    double loss_sum = 0.0;
    int loss_count = 0;
    try {
      while (!world.done()) {
        const double eps = epsilon_at(global_step, ap);
        const int action = select_action(online, obs, eps, rng_explore);
        StepResult res = world.step(action);
        ++global_step;

        Transition tr;
        tr.grid = grid_indices(obs.grid);
        tr.feats = obs.feats;
        tr.action = action;
        tr.reward = res.reward;
        tr.next_grid = grid_indices(res.obs.grid);
        tr.next_feats = res.obs.feats;
        tr.terminal = res.terminal != Terminal::kNone;
        buffer.push(std::move(tr));

        stats.total_reward += res.reward;
        ++stats.steps;
        if (res.terminal == Terminal::kCollision) stats.collisions = 1;

        obs = std::move(res.obs);

        if (buffer.size() >= warmup &&
            global_step % static_cast<std::uint64_t>(ap.training_frequency) == 0) {
          if (auto loss = train_step(online, target, buffer, ap, opt,
                                     rng_sample)) {
            loss_sum += *loss;
            ++loss_count;
          }
        }
        if (global_step % static_cast<std::uint64_t>(ap.target_sync) == 0)
          target = online;
      }
      stats.terminal = world.terminal();
    } catch (const SimulationFaultError&) {
      stats.faulted = true;
      stats.terminal = Terminal::kNone;
    }
    stats.epsilon = epsilon_at(global_step, ap);
    stats.mean_step_reward =
        stats.steps > 0 ? stats.total_reward / stats.steps : 0.0;
    stats.loss_mean = loss_count > 0 ? loss_sum / loss_count : 0.0;
    out.episodes.push_back(stats);
    if (on_episode) on_episode(stats);
  }
  out.net = std::move(online);
  out.global_steps = global_step;
  return out;
}

} // namespace vve
