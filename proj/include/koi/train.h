#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "koi/learner.h"
#include "koi/replay.h"
#include "koi/sim_env.h"

namespace koi {

struct OnlineConfig {
  std::int64_t total_steps = 60000;
  // Steps collected by the (noisy) pretrained policy before updates start.
  std::int64_t seed_frames = 12000;
  int update_every = 2;
  // Steps after seed_frames during which only the critic is updated.
  std::int64_t critic_warmup = 0;
  int batch_size = 256;
  int nstep = 3;
  double gamma = 0.99;
  double critic_tau = 0.01;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  double alpha = 0.03;
  double noise_std = 0.1;
  LambdaStrategy lambda;
  RewardConfig reward;
  Eigen::Index replay_capacity = 150000;
  int critic_hidden = 1024;
  int critic_hidden_layers = 2;
  // Clipped double Q.
  bool twin_critic = true;
  // Actor sees Q / mean|Q| so the BC term keeps a fixed relative weight.
  bool normalize_q = false;
  int frame_stack = 1;
  std::int64_t eval_every = 2000;
  int eval_episodes = 10;
  std::uint64_t eval_seed_base = 1000000;
  // When positive, OT features are the actor's first hidden layer,
  // snapshotted every this many steps. Off: raw env features.
  std::int64_t encoder_refresh = 0;
  // Episodes between checkpoints; 0 disables them.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  // Testing hook: return after this many episodes (0 runs to the end).
  int stop_after_episodes = 0;
};

// Expert features and importance marginal for one demonstration.
struct RewardTarget {
  Matrix features;
  ImportanceDistribution nu;
};

struct EpisodeLog {
  std::int64_t step = 0;  // env steps completed at episode end
  int episode = 0;
  bool success = false;
  double mean_reward = 0.0;
  // Means over the episode's updates; NaN when there were none.
  double lambda = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;

  bool operator==(const EpisodeLog&) const = default;
};

struct EvalLog {
  std::int64_t step = 0;
  double success_rate = 0.0;

  bool operator==(const EvalLog&) const = default;
};

struct TrainLog {
  std::vector<EpisodeLog> episodes;
  std::vector<EvalLog> evals;
};

struct TrainResult {
  ActorCritic agent;
  TrainLog log;
  std::int64_t steps = 0;
  bool finished = false;
};

struct TrainInputs {
  const TaskSpec* spec = nullptr;
  const Mlp* bc_policy = nullptr;
  std::vector<RewardTarget> targets;
  // Stacked demo (state, action) pairs for the BC regularizer.
  Matrix demo_states, demo_actions;
};

// Fraction of `episodes` noise-free rollouts that succeed, starting from
// seeds base, base + 1, ...
double evaluate_policy(const TaskSpec& spec, const Mlp& actor, int frame_stack,
                       std::uint64_t seed_base, int episodes);

// Runs from scratch, or from `config.checkpoint_path` when `resume` is set
// and the file exists.
TrainResult online_train(const TrainInputs& inputs, const OnlineConfig& config,
                         std::uint64_t seed, bool resume = false);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

}  // namespace koi
