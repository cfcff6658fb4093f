#include "koi/learner.h"

#include <algorithm>
#include <cmath>

namespace koi {
namespace {

Matrix concat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

void check_rows(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows())
    throw DimensionError(std::string(what) + ": row count mismatch (" +
                         std::to_string(a.rows()) + " vs " +
                         std::to_string(b.rows()) + ")");
}

}  // namespace

Vector q_values(const Mlp& critic, const Matrix& states, const Matrix& actions) {
  check_rows(states, actions, "q_values");
  return critic.forward(concat(states, actions)).col(0);
}

double bc_loss(const Mlp& actor, const Matrix& states, const Matrix& actions,
               Vector* grad) {
  check_rows(states, actions, "bc_loss");
  Mlp::Tape tape;
  Matrix diff = actor.forward(states, tape) - actions;
  const double n = static_cast<double>(diff.size());
  if (grad) actor.backward(tape, (2.0 / n) * diff, grad);
  return diff.squaredNorm() / n;
}

CriticFn critic_fn(const Mlp& critic) {
  return [&critic](const Matrix& states, const Matrix& actions, Matrix* action_grad) {
    check_rows(states, actions, "critic");
    Mlp::Tape tape;
    Vector q = critic.forward(concat(states, actions), tape).col(0);
    if (action_grad)
      *action_grad = critic.backward(tape, Matrix::Ones(states.rows(), 1), nullptr)
                         .rightCols(actions.cols());
    return q;
  };
}

CriticFn min_critic_fn(const Mlp& a, const Mlp& b) {
  return [fa = critic_fn(a), fb = critic_fn(b)](const Matrix& states,
                                                const Matrix& actions,
                                                Matrix* action_grad) {
    Matrix ga, gb;
    Vector qa = fa(states, actions, action_grad ? &ga : nullptr);
    Vector qb = fb(states, actions, action_grad ? &gb : nullptr);
    Vector q = qa.cwiseMin(qb);
    if (action_grad) {
      *action_grad = ga;
      for (Eigen::Index i = 0; i < q.size(); ++i)
        if (qb[i] < qa[i]) action_grad->row(i) = gb.row(i);
    }
    return q;
  };
}

double actor_loss(const Mlp& actor, const Mlp& critic, const Matrix& states,
                  const Matrix& demo_states, const Matrix& demo_actions,
                  double lambda, double alpha, Vector* grad) {
  return actor_loss(actor, critic_fn(critic), states, demo_states, demo_actions,
                    lambda, alpha, grad);
}

double actor_loss(const Mlp& actor, const CriticFn& critic, const Matrix& states,
                  const Matrix& demo_states, const Matrix& demo_actions,
                  double lambda, double alpha, Vector* grad) {
  check_rows(demo_states, demo_actions, "actor_loss");
  double loss = 0.0;
  if (lambda < 1.0) {
    Mlp::Tape tape;
    Matrix a = actor.forward(states, tape);
    Matrix dq_da;
    Vector q = critic(states, a, grad ? &dq_da : nullptr);
    const double b = static_cast<double>(states.rows());
    loss -= (1.0 - lambda) * q.mean();
    if (grad) actor.backward(tape, (-(1.0 - lambda) / b) * dq_da, grad);
  }
  if (lambda > 0.0 && alpha != 0.0) {
    Mlp::Tape tape;
    Matrix diff = actor.forward(demo_states, tape) - demo_actions;
    Vector norms = diff.rowwise().norm();
    const double b = static_cast<double>(demo_states.rows());
    loss += alpha * lambda * norms.mean();
    if (grad) {
      Matrix g = diff;
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        g.row(i) *= norms[i] > 0.0 ? alpha * lambda / (b * norms[i]) : 0.0;
      actor.backward(tape, g, grad);
    }
  }
  return loss;
}

Vector nstep_targets(const Batch& batch, const Mlp& target_critic,
                     const Mlp& target_actor) {
  return nstep_targets(batch, critic_fn(target_critic), target_actor);
}

Vector nstep_targets(const Batch& batch, const CriticFn& target_critic,
                     const Mlp& target_actor) {
  Matrix next_actions = target_actor.forward(batch.bootstrap_states);
  Vector next_q = target_critic(batch.bootstrap_states, next_actions, nullptr);
  Vector y = batch.returns;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (batch.discounts[i] != 0.0) y[i] += batch.discounts[i] * next_q[i];
  return y;
}

double critic_loss(const Mlp& critic, const Matrix& states,
                   const Matrix& actions, const Vector& targets, Vector* grad) {
  check_rows(states, actions, "critic_loss");
  if (targets.size() != states.rows())
    throw DimensionError("critic_loss: target count mismatch");
  Mlp::Tape tape;
  Vector err = critic.forward(concat(states, actions), tape).col(0) - targets;
  const double b = static_cast<double>(err.size());
  if (grad) critic.backward(tape, (2.0 / b) * err, grad);
  return err.squaredNorm() / b;
}

double lambda_schedule(const LambdaStrategy& s, std::int64_t step) {
  if (s.steps <= 0) return std::clamp(s.end, 0.0, 1.0);
  double frac = std::clamp(static_cast<double>(step) / s.steps, 0.0, 1.0);
  double v = s.start + frac * (s.end - s.start);
  return std::clamp(v, std::min(s.start, s.end), std::max(s.start, s.end));
}

double adaptive_lambda(const Matrix& states, const Mlp& bc_policy,
                       const Mlp& policy, const Mlp& critic) {
  return adaptive_lambda(states, bc_policy, policy, critic_fn(critic));
}

double adaptive_lambda(const Matrix& states, const Mlp& bc_policy,
                       const Mlp& policy, const CriticFn& critic) {
  if (states.rows() == 0)
    throw InvariantError("adaptive lambda needs a non-empty batch");
  Vector qb = critic(states, bc_policy.forward(states), nullptr);
  Vector qe = critic(states, policy.forward(states), nullptr);
  Eigen::Index wins = (qb.array() > qe.array()).count();
  return static_cast<double>(wins) / static_cast<double>(states.rows());
}

double lambda_value(const LambdaStrategy& strategy, std::int64_t step,
                    const Matrix& states, const Mlp& bc_policy,
                    const Mlp& policy, const Mlp& critic) {
  return lambda_value(strategy, step, states, bc_policy, policy,
                      critic_fn(critic));
}

double lambda_value(const LambdaStrategy& strategy, std::int64_t step,
                    const Matrix& states, const Mlp& bc_policy,
                    const Mlp& policy, const CriticFn& critic) {
  switch (strategy.mode) {
    case LambdaMode::kAdaptive:
      return adaptive_lambda(states, bc_policy, policy, critic);
    case LambdaMode::kLinearDecay:
      return lambda_schedule(strategy, step);
    case LambdaMode::kFixed:
      return std::clamp(strategy.constant, 0.0, 1.0);
    case LambdaMode::kAdaptiveDecay:
      return std::min(adaptive_lambda(states, bc_policy, policy, critic),
                      lambda_schedule(strategy, step));
  }
  throw InvariantError("unknown lambda mode");
}

ActorCritic make_actor_critic(Mlp actor, int hidden, int hidden_layers,
                              const AdamOptions& critic_opt,
                              const AdamOptions& actor_opt,
                              std::mt19937_64& rng, bool twin) {
  MlpShape shape;
  shape.input = actor.shape().input + actor.shape().output;
  shape.output = 1;
  shape.hidden = hidden;
  shape.hidden_layers = hidden_layers;
  ActorCritic ac;
  ac.critic = Mlp(shape, rng);
  ac.target_critic = ac.critic;
  ac.actor_opt = Adam(actor.parameter_count(), actor_opt);
  ac.critic_opt = Adam(ac.critic.parameter_count(), critic_opt);
  if (twin) {
    ac.twin = true;
    ac.critic2 = Mlp(shape, rng);
    ac.target_critic2 = ac.critic2;
    ac.critic2_opt = Adam(ac.critic2.parameter_count(), critic_opt);
  }
  ac.actor = std::move(actor);
  return ac;
}

CriticFn ActorCritic::q() const {
  return twin ? min_critic_fn(critic, critic2) : critic_fn(critic);
}

CriticFn ActorCritic::target_q() const {
  return twin ? min_critic_fn(target_critic, target_critic2)
              : critic_fn(target_critic);
}

void soft_update(ActorCritic& ac, double rate) {
  soft_update(ac.target_critic, ac.critic, rate);
  if (ac.twin) soft_update(ac.target_critic2, ac.critic2, rate);
}

CriticFn normalized_critic(CriticFn critic) {
  return [critic = std::move(critic)](const Matrix& states, const Matrix& actions,
                                      Matrix* action_grad) {
    Vector q = critic(states, actions, action_grad);
    double scale = q.cwiseAbs().mean();
    if (!(scale > 1e-8)) return q;
    if (action_grad) *action_grad /= scale;
    return Vector(q / scale);
  };
}

double actor_update(ActorCritic& ac, const Matrix& states,
                    const Matrix& demo_states, const Matrix& demo_actions,
                    double lambda, double alpha, bool normalize_q) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw InvariantError("lambda must lie in [0, 1]");
  Vector grad = Vector::Zero(ac.actor.parameter_count());
  CriticFn q = normalize_q ? normalized_critic(ac.q()) : ac.q();
  double loss = actor_loss(ac.actor, q, states, demo_states,
                           demo_actions, lambda, alpha, &grad);
  ac.actor_opt.step(ac.actor.params(), grad);
  return loss;
}

double critic_update(ActorCritic& ac, const Batch& batch) {
  Vector targets = nstep_targets(batch, ac.target_q(), ac.actor);
  Vector grad = Vector::Zero(ac.critic.parameter_count());
  double loss = critic_loss(ac.critic, batch.states, batch.actions, targets, &grad);
  ac.critic_opt.step(ac.critic.params(), grad);
  if (ac.twin) {
    grad.setZero(ac.critic2.parameter_count());
    loss += critic_loss(ac.critic2, batch.states, batch.actions, targets, &grad);
    ac.critic2_opt.step(ac.critic2.params(), grad);
    loss *= 0.5;
  }
  return loss;
}

Matrix stack_features(const Matrix& rows, int k) {
  if (k < 1) throw InvariantError("frame stack must be >= 1");
  if (k == 1) return rows;
  const Eigen::Index d = rows.cols();
  Matrix out(rows.rows(), k * d);
  for (Eigen::Index t = 0; t < rows.rows(); ++t)
    for (int j = 0; j < k; ++j) {
      Eigen::Index src = std::max<Eigen::Index>(0, t - (k - 1) + j);
      out.block(t, j * d, 1, d) = rows.row(src);
    }
  return out;
}

void demo_pairs(const std::vector<Trajectory>& demos, int frame_stack,
                Matrix& states, Matrix& actions) {
  if (demos.empty()) throw InvariantError("no demonstrations");
  Eigen::Index rows = 0;
  for (const Trajectory& d : demos) {
    if (!d.has_actions())
      throw InvariantError("demonstration of task '" + d.meta().task +
                           "' has no actions");
    rows += d.size() - 1;
  }
  const Eigen::Index a_dim = demos[0][0].action->size();
  states.resize(rows, demos[0].feature_dim() * frame_stack);
  actions.resize(rows, a_dim);
  Eigen::Index r = 0;
  for (const Trajectory& d : demos) {
    Matrix stacked = stack_features(d.feature_matrix(), frame_stack);
    if (stacked.cols() != states.cols() || d[0].action->size() != a_dim)
      throw DimensionError("demonstrations disagree on dimensions");
    // The final state carries no action.
    for (int t = 0; t + 1 < d.size(); ++t, ++r) {
      states.row(r) = stacked.row(t);
      actions.row(r) = d[t].action->transpose();
    }
  }
}

Mlp train_bc(const std::vector<Trajectory>& demos, const BcConfig& config,
             std::mt19937_64& rng, std::vector<double>* losses) {
  Matrix states, actions;
  demo_pairs(demos, config.frame_stack, states, actions);
  MlpShape shape;
  shape.input = static_cast<int>(states.cols());
  shape.output = static_cast<int>(actions.cols());
  shape.hidden = config.hidden;
  shape.hidden_layers = config.hidden_layers;
  shape.activation = config.activation;
  shape.tanh_output = true;
  Mlp policy(shape, rng);
  Adam adam(policy.parameter_count(), {.lr = config.lr});

  const bool full = config.batch_size <= 0 || config.batch_size >= states.rows();
  Matrix bs, ba;
  std::uniform_int_distribution<Eigen::Index> pick(0, states.rows() - 1);
  for (int step = 0; step < config.steps; ++step) {
    if (!full) {
      bs.resize(config.batch_size, states.cols());
      ba.resize(config.batch_size, actions.cols());
      for (int i = 0; i < config.batch_size; ++i) {
        Eigen::Index k = pick(rng);
        bs.row(i) = states.row(k);
        ba.row(i) = actions.row(k);
      }
    }
    Vector grad = Vector::Zero(policy.parameter_count());
    double loss = full ? bc_loss(policy, states, actions, &grad)
                       : bc_loss(policy, bs, ba, &grad);
    if (!std::isfinite(loss)) throw Error("BC loss became non-finite");
    if (losses) losses->push_back(loss);
    if (config.optimizer == BcOptimizer::kAdam)
      adam.step(policy.params(), grad);
    else
      policy.params() -= config.lr * grad;
  }
  return policy;
}

RewardSeries relabel_episode(const Matrix& episode_features, bool success,
                             const Matrix& demo_features,
                             const ImportanceDistribution& nu,
                             const RewardConfig& config) {
  if (nu.nu.size() != demo_features.rows())
    throw DimensionError("importance length does not match the demonstration");
  CostMatrix cost = cosine_cost_matrix(episode_features, demo_features);
  Vector mu = Vector::Constant(episode_features.rows(),
                               1.0 / static_cast<double>(episode_features.rows()));
  TransportPlan plan = sinkhorn(cost, mu, nu.nu, config.sinkhorn);
  RewardSeries r = per_state_rewards(plan, cost, config.scale);
  if (success) r.values.array() += config.bonus;
  return r;
}

RewardSeries relabel_episode(const Trajectory& episode, const Trajectory& demo,
                             const ImportanceDistribution& nu,
                             const RewardConfig& config) {
  return relabel_episode(episode.feature_matrix(), episode.meta().success,
                         demo.feature_matrix(), nu, config);
}

}  // namespace koi
