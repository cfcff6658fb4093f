#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "koi/importance.h"
#include "koi/mlp.h"
#include "koi/ot.h"
#include "koi/trajectory.h"

namespace koi {

// n-step transitions. `discounts` is gamma^k for a window of k steps that
// ends in a bootstrappable state and 0 when the window hits a terminal.
struct Batch {
  Matrix states;
  Matrix actions;
  Vector returns;  // sum_{i<k} gamma^i r_{t+i}
  Matrix bootstrap_states;
  Vector discounts;

  Eigen::Index size() const { return states.rows(); }
};

// Critic input is [state, action].
Vector q_values(const Mlp& critic, const Matrix& states, const Matrix& actions);

// Mean squared action error over every action component.
double bc_loss(const Mlp& actor, const Matrix& states, const Matrix& actions,
               Vector* grad = nullptr);

// Q values for a batch; fills dQ/da (rows match actions) when asked.
using CriticFn = std::function<Vector(const Matrix& states, const Matrix& actions,
                                      Matrix* action_grad)>;
CriticFn critic_fn(const Mlp& critic);
// Elementwise min of two critics; the gradient follows the smaller one.
CriticFn min_critic_fn(const Mlp& a, const Mlp& b);

// -(1 - lambda) mean Q(s, pi(s)) + alpha * lambda * mean ||a_d - pi(s_d)||.
// The critic is held fixed; `grad` receives the actor gradient.
double actor_loss(const Mlp& actor, const Mlp& critic, const Matrix& states,
                  const Matrix& demo_states, const Matrix& demo_actions,
                  double lambda, double alpha, Vector* grad = nullptr);
double actor_loss(const Mlp& actor, const CriticFn& critic, const Matrix& states,
                  const Matrix& demo_states, const Matrix& demo_actions,
                  double lambda, double alpha, Vector* grad = nullptr);

// returns + discounts * Q_target(s', pi_target(s')).
Vector nstep_targets(const Batch& batch, const Mlp& target_critic,
                     const Mlp& target_actor);
Vector nstep_targets(const Batch& batch, const CriticFn& target_critic,
                     const Mlp& target_actor);

// Mean squared error of Q(s, a) against fixed targets.
double critic_loss(const Mlp& critic, const Matrix& states,
                   const Matrix& actions, const Vector& targets,
                   Vector* grad = nullptr);

enum class LambdaMode {
  kAdaptive,      // fraction of states where the BC action scores higher
  kLinearDecay,   // start -> end over `steps`
  kFixed,         // constant
  kAdaptiveDecay, // min(adaptive, linear decay)
};

struct LambdaStrategy {
  LambdaMode mode = LambdaMode::kAdaptive;
  double start = 1.0;
  double end = 0.1;
  std::int64_t steps = 20000;
  double constant = 0.9;
};

double lambda_schedule(const LambdaStrategy& strategy, std::int64_t step);
// Fraction of rows with Q(s, pi_b(s)) > Q(s, pi_e(s)), exactly.
double adaptive_lambda(const Matrix& states, const Mlp& bc_policy,
                       const Mlp& policy, const Mlp& critic);
double adaptive_lambda(const Matrix& states, const Mlp& bc_policy,
                       const Mlp& policy, const CriticFn& critic);
double lambda_value(const LambdaStrategy& strategy, std::int64_t step,
                    const Matrix& states, const Mlp& bc_policy,
                    const Mlp& policy, const Mlp& critic);
double lambda_value(const LambdaStrategy& strategy, std::int64_t step,
                    const Matrix& states, const Mlp& bc_policy,
                    const Mlp& policy, const CriticFn& critic);

// With `twin`, a second critic is trained on the same targets and every
// Q estimate (targets, actor objective, lambda) is the min of the two.
struct ActorCritic {
  Mlp actor, critic, target_critic;
  Adam actor_opt, critic_opt;
  bool twin = false;
  Mlp critic2, target_critic2;
  Adam critic2_opt;

  CriticFn q() const;
  CriticFn target_q() const;
};

ActorCritic make_actor_critic(Mlp actor, int hidden, int hidden_layers,
                              const AdamOptions& critic_opt,
                              const AdamOptions& actor_opt,
                              std::mt19937_64& rng, bool twin = false);
void soft_update(ActorCritic& ac, double rate);

// Divides Q and its gradient by the batch mean |Q|, held constant.
CriticFn normalized_critic(CriticFn critic);

// One gradient step each; return the pre-step loss.
double actor_update(ActorCritic& ac, const Matrix& states,
                    const Matrix& demo_states, const Matrix& demo_actions,
                    double lambda, double alpha, bool normalize_q = false);
// The current actor serves as the target policy.
double critic_update(ActorCritic& ac, const Batch& batch);

enum class BcOptimizer { kAdam, kGradientDescent };

struct BcConfig {
  int hidden = 1024;
  int hidden_layers = 2;
  Activation activation = Activation::kRelu;
  int steps = 20000;
  int batch_size = 256;  // 0 for full batch
  double lr = 1e-4;
  BcOptimizer optimizer = BcOptimizer::kAdam;
  // Consecutive feature vectors concatenated into one policy input.
  int frame_stack = 1;
};

// Row t becomes [f_{t-k+1}, ..., f_t], padding before the start with f_0.
Matrix stack_features(const Matrix& rows, int k);

// Stacked (state, action) pairs from demos that carry actions.
void demo_pairs(const std::vector<Trajectory>& demos, int frame_stack,
                Matrix& states, Matrix& actions);

// Returns the policy; `losses` (if given) receives the loss per step.
Mlp train_bc(const std::vector<Trajectory>& demos, const BcConfig& config,
             std::mt19937_64& rng, std::vector<double>* losses = nullptr);

struct RewardConfig {
  SinkhornOptions sinkhorn;
  double scale = 10.0;
  // Added to every state of a successful episode.
  double bonus = 0.0;
};

// Per-state OT rewards of `episode` against `demo` under importance `nu`.
RewardSeries relabel_episode(const Matrix& episode_features, bool success,
                             const Matrix& demo_features,
                             const ImportanceDistribution& nu,
                             const RewardConfig& config);
RewardSeries relabel_episode(const Trajectory& episode, const Trajectory& demo,
                             const ImportanceDistribution& nu,
                             const RewardConfig& config);

}  // namespace koi
