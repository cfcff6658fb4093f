#include "koi/learner.h"

#include <cmath>

#include <gtest/gtest.h>

#include "grad_check.h"
#include "koi/importance.h"
#include "koi/sim_env.h"
#include "koi/train.h"

namespace koi {
namespace {

using test::random_matrix;

// Linear network y = x W + b with the given weights.
Mlp linear(const Matrix& w, const Vector& b) {
  std::mt19937_64 rng(0);
  Mlp m(MlpShape{static_cast<int>(w.rows()), 1, static_cast<int>(w.cols()), 0,
                 Activation::kRelu, false},
        rng);
  m.params() << Eigen::Map<const Vector>(w.data(), w.size()), b;
  return m;
}

TEST(Mlp, LinearLayout) {
  Matrix w(2, 1);
  w << 2.0, -1.0;
  Mlp m = linear(w, Vector::Constant(1, 0.5));
  Matrix x(1, 2);
  x << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(m.forward(x)(0, 0), 2.5);
  EXPECT_THROW(m.forward(Matrix::Zero(1, 3)), DimensionError);
}

TEST(Mlp, TanhOutputIsBounded) {
  std::mt19937_64 rng(1);
  Mlp m(MlpShape{3, 16, 2, 2, Activation::kRelu, true}, rng);
  m.params() *= 50.0;
  Matrix y = m.forward(random_matrix(rng, 20, 3));
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Gradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (Activation act : {Activation::kRelu, Activation::kTanh})
    for (int trial = 0; trial < 20; ++trial) {
      test::GradCase c = test::random_grad_case(rng, act);
      test::GradErrors e = test::check_gradients(c);
      EXPECT_LT(e.bc, 1e-4) << trial;
      EXPECT_LT(e.actor, 1e-4) << trial;
      EXPECT_LT(e.critic, 1e-4) << trial;
    }
}

TEST(SoftUpdate, Examples) {
  std::mt19937_64 rng(2);
  MlpShape shape{2, 3, 1, 1, Activation::kRelu, false};
  Mlp target(shape, rng), online(shape, rng);
  target.params().setZero();
  online.params().setOnes();
  soft_update(target, online, 0.01);
  EXPECT_TRUE(target.params().isApproxToConstant(0.01, 1e-15));
  soft_update(target, online, 1.0);
  EXPECT_EQ(target.params(), online.params());
  Mlp same = online;
  soft_update(same, online, 0.3);
  EXPECT_EQ(same.params(), online.params());
  EXPECT_THROW(soft_update(target, online, 0.0), InvariantError);
  Mlp other(MlpShape{2, 4, 1, 1, Activation::kRelu, false}, rng);
  EXPECT_THROW(soft_update(other, online, 0.5), DimensionError);
}

TEST(Lambda, AdaptiveIsExactIndicatorFraction) {
  // Q(s, a) = a; pi_b(s) = s; pi_e(s) = 0.5.
  Mlp critic = linear((Matrix(2, 1) << 0.0, 1.0).finished(), Vector::Zero(1));
  Mlp bc = linear(Matrix::Ones(1, 1), Vector::Zero(1));
  Mlp pe = linear(Matrix::Zero(1, 1), Vector::Constant(1, 0.5));
  Matrix s(4, 1);
  s << 1.0, 0.9, 0.7, 0.2;
  EXPECT_EQ(adaptive_lambda(s, bc, pe, critic), 0.75);
  s << 0.5, 0.5, 0.5, 0.5;  // ties do not count
  EXPECT_EQ(adaptive_lambda(s, bc, pe, critic), 0.0);
  EXPECT_THROW(adaptive_lambda(Matrix(0, 1), bc, pe, critic), InvariantError);
}

TEST(Lambda, Schedules) {
  LambdaStrategy lin{LambdaMode::kLinearDecay, 1.0, 0.1, 20000, 0.9};
  EXPECT_NEAR(lambda_schedule(lin, 10000), 0.55, 1e-15);
  EXPECT_EQ(lambda_schedule(lin, 0), 1.0);
  EXPECT_NEAR(lambda_schedule(lin, 20000), 0.1, 1e-15);
  EXPECT_NEAR(lambda_schedule(lin, 1000000), 0.1, 1e-15);

  Mlp critic = linear((Matrix(2, 1) << 0.0, 1.0).finished(), Vector::Zero(1));
  Mlp bc = linear(Matrix::Ones(1, 1), Vector::Zero(1));
  Mlp pe = linear(Matrix::Zero(1, 1), Vector::Constant(1, 0.5));
  Matrix s(4, 1);
  s << 1.0, 0.9, 0.7, 0.2;
  LambdaStrategy fixed{LambdaMode::kFixed};
  LambdaStrategy both{LambdaMode::kAdaptiveDecay, 1.0, 0.1, 20000};
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> step(0, 100000);
  for (int i = 0; i < 200; ++i) {
    std::int64_t t = step(rng);
    EXPECT_EQ(lambda_value(fixed, t, s, bc, pe, critic), 0.9);
    double v = lambda_value(both, t, s, bc, pe, critic);
    EXPECT_EQ(v, std::min(0.75, lambda_schedule(both, t)));
    for (const auto& st : {fixed, both, lin}) {
      double x = lambda_value(st, t, s, bc, pe, critic);
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(ActorLoss, LambdaExtremes) {
  std::mt19937_64 rng(4);
  test::GradCase c = test::random_grad_case(rng, Activation::kTanh);
  auto grad = [&](const Mlp& critic, const Matrix& ds, double lambda) {
    Vector g = Vector::Zero(c.actor.parameter_count());
    actor_loss(c.actor, critic, c.states, ds, c.demo_actions, lambda, c.alpha, &g);
    return g;
  };
  Mlp other_critic = c.critic;
  other_critic.params() = random_matrix(rng, c.critic.parameter_count(), 1).col(0);
  // Q term vanishes at lambda = 1.
  EXPECT_EQ(grad(c.critic, c.demo_states, 1.0), grad(other_critic, c.demo_states, 1.0));
  // BC term vanishes at lambda = 0.
  Matrix other_demo = random_matrix(rng, c.demo_states.rows(), c.demo_states.cols());
  EXPECT_EQ(grad(c.critic, c.demo_states, 0.0), grad(c.critic, other_demo, 0.0));
}

TEST(ActorLoss, QuadraticCriticDrivesPolicyToOptimum) {
  std::mt19937_64 rng(5);
  Vector target(2);
  target << 0.3, -0.6;
  CriticFn quadratic = [&](const Matrix&, const Matrix& a, Matrix* g) {
    Matrix d = a.rowwise() - target.transpose();
    if (g) *g = -2.0 * d;
    return Vector(-d.rowwise().squaredNorm());
  };
  Mlp actor(MlpShape{3, 16, 2, 2, Activation::kRelu, true}, rng);
  Adam adam(actor.parameter_count(), {.lr = 1e-3});
  Matrix s = random_matrix(rng, 32, 3);
  for (int it = 0; it < 15000; ++it) {
    Vector g = Vector::Zero(actor.parameter_count());
    actor_loss(actor, quadratic, s, s, Matrix::Zero(32, 2), 0.0, 0.03, &g);
    adam.step(actor.params(), g);
  }
  Matrix a = actor.forward(s);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    EXPECT_LT((a.row(i).transpose() - target).norm(), 1e-3);
}

TEST(CriticTargets, Examples) {
  std::mt19937_64 rng(6);
  Mlp actor(MlpShape{2, 4, 1, 1, Activation::kRelu, true}, rng);
  Mlp constant = linear(Matrix::Zero(3, 1), Vector::Constant(1, 4.0));
  Batch b;
  b.states = random_matrix(rng, 2, 2);
  b.actions = random_matrix(rng, 2, 1);
  b.bootstrap_states = random_matrix(rng, 2, 2);
  b.returns = Vector::Zero(2);
  b.returns[0] = 0.7;
  b.discounts = Vector::Zero(2);
  b.discounts[1] = std::pow(0.99, 3);
  Vector y = nstep_targets(b, constant, actor);
  EXPECT_EQ(y[0], 0.7);
  EXPECT_DOUBLE_EQ(y[1], std::pow(0.99, 3) * 4.0);
}

TEST(CriticUpdate, ReducesLossOnFixedTargets) {
  std::mt19937_64 rng(8);
  Mlp actor(MlpShape{3, 8, 2, 1, Activation::kRelu, true}, rng);
  ActorCritic ac = make_actor_critic(actor, 16, 2, {.lr = 1e-3}, {.lr = 1e-3}, rng);
  Batch b;
  b.states = random_matrix(rng, 16, 3);
  b.actions = random_matrix(rng, 16, 2);
  b.bootstrap_states = b.states;
  b.returns = random_matrix(rng, 16, 1).col(0);
  b.discounts = Vector::Zero(16);
  double first = critic_update(ac, b), last = first;
  for (int i = 0; i < 300; ++i) last = critic_update(ac, b);
  EXPECT_LT(last, 0.1 * first);
}

TEST(TwinCritic, MinTakesSmallerValueAndItsGradient) {
  // q1 = a, q2 = 1 - a: q1 is smaller for a < 0.5.
  Mlp q1 = linear((Matrix(2, 1) << 0.0, 1.0).finished(), Vector::Zero(1));
  Mlp q2 = linear((Matrix(2, 1) << 0.0, -1.0).finished(), Vector::Constant(1, 1.0));
  Matrix s = Matrix::Zero(3, 1), a(3, 1);
  a << 0.2, 0.9, 0.5;
  Matrix g;
  Vector q = min_critic_fn(q1, q2)(s, a, &g);
  EXPECT_DOUBLE_EQ(q[0], 0.2);
  EXPECT_DOUBLE_EQ(q[1], 1.0 - 0.9);
  EXPECT_DOUBLE_EQ(g(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(1, 0), -1.0);
  EXPECT_DOUBLE_EQ(g(2, 0), 1.0);  // tie follows the first critic
}

TEST(TwinCritic, NormalizedCriticScalesByMeanAbsQ) {
  Mlp q1 = linear((Matrix(2, 1) << 0.0, 4.0).finished(), Vector::Zero(1));
  Matrix s = Matrix::Zero(2, 1), a(2, 1);
  a << 1.0, -3.0;
  Matrix g;
  Vector q = normalized_critic(critic_fn(q1))(s, a, &g);
  // Q = (4, -12), mean |Q| = 8.
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_DOUBLE_EQ(q[1], -1.5);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  // Adaptive lambda is unchanged by a positive rescaling.
  Mlp bc = linear((Matrix(1, 1) << 1.0).finished(), Vector::Zero(1));
  Mlp pe = linear((Matrix(1, 1) << -1.0).finished(), Vector::Zero(1));
  Matrix st(4, 1);
  st << 1.0, 2.0, -1.0, 3.0;
  Mlp qa = linear((Matrix(2, 1) << 0.0, 1.0).finished(), Vector::Zero(1));
  EXPECT_EQ(adaptive_lambda(st, bc, pe, normalized_critic(critic_fn(qa))),
            adaptive_lambda(st, bc, pe, qa));
}

TEST(TwinCritic, UpdateTrainsBothOnSharedTargets) {
  std::mt19937_64 rng(10);
  Mlp actor(MlpShape{3, 8, 2, 1, Activation::kTanh, true}, rng);
  ActorCritic ac = make_actor_critic(actor, 16, 2, {.lr = 1e-3}, {.lr = 1e-3}, rng, true);
  ASSERT_TRUE(ac.twin);
  EXPECT_NE(ac.critic.params(), ac.critic2.params());
  Batch b;
  b.states = random_matrix(rng, 16, 3);
  b.actions = random_matrix(rng, 16, 2);
  b.bootstrap_states = random_matrix(rng, 16, 3);
  b.returns = random_matrix(rng, 16, 1).col(0);
  b.discounts = Vector::Constant(16, 0.9);
  // Targets bootstrap from the smaller target critic.
  Vector y = nstep_targets(b, ac.target_q(), ac.actor);
  Matrix na = ac.actor.forward(b.bootstrap_states);
  Vector m = q_values(ac.target_critic, b.bootstrap_states, na)
                 .cwiseMin(q_values(ac.target_critic2, b.bootstrap_states, na));
  EXPECT_TRUE(y.isApprox(b.returns + 0.9 * m));

  Vector c1 = ac.critic.params(), c2 = ac.critic2.params();
  critic_update(ac, b);
  EXPECT_NE(ac.critic.params(), c1);
  EXPECT_NE(ac.critic2.params(), c2);
  Vector t2 = ac.target_critic2.params();
  soft_update(ac, 1.0);
  EXPECT_EQ(ac.target_critic2.params(), ac.critic2.params());
  EXPECT_NE(ac.target_critic2.params(), t2);
}

Trajectory pair_demo(const Vector& s, const Vector& a) {
  std::vector<State> states(2);
  states[0].features = s;
  states[0].action = a;
  states[1].features = s;
  states[1].action = a;
  return Trajectory(states, {});
}

TEST(TrainBc, SinglePairConverges) {
  std::mt19937_64 rng(9);
  Vector s(3), a(2);
  s << 0.2, -0.4, 1.0;
  a << 0.5, -0.25;
  BcConfig c;
  c.hidden = 32;
  c.steps = 3000;
  c.lr = 1e-3;
  Mlp pi = train_bc({pair_demo(s, a)}, c, rng);
  EXPECT_LT((pi.forward(s.transpose()).row(0).transpose() - a).norm(), 1e-3);
}

TEST(TrainBc, FullBatchGradientDescentIsMonotone) {
  std::mt19937_64 rng(10);
  std::vector<Trajectory> demos;
  for (int i = 0; i < 4; ++i) {
    std::vector<State> states(6);
    for (auto& st : states) {
      st.features = random_matrix(rng, 3, 1).col(0);
      st.action = random_matrix(rng, 2, 1, -0.8, 0.8).col(0);
    }
    demos.emplace_back(states, TrajectoryMeta{});
  }
  BcConfig c;
  c.hidden = 16;
  c.steps = 500;
  c.batch_size = 0;
  c.lr = 1e-2;
  c.optimizer = BcOptimizer::kGradientDescent;
  std::vector<double> losses;
  train_bc(demos, c, rng, &losses);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1] + 1e-8);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainBc, RequiresActions) {
  std::mt19937_64 rng(11);
  std::vector<State> states(3);
  for (auto& st : states) st.features = Vector::Ones(2);
  EXPECT_THROW(train_bc({Trajectory(states, {})}, {}, rng), InvariantError);
  EXPECT_THROW(train_bc({}, {}, rng), InvariantError);
}

TEST(TrainBc, ExpertDemosGiveNonzeroSuccess) {
  TaskSpec spec = TaskSpec::pick_place(2);
  std::vector<Trajectory> demos;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    demos.push_back(record_expert_demo(spec, seed, false));
  std::mt19937_64 rng(12);
  BcConfig c;
  c.hidden = 128;
  c.steps = 6000;
  c.batch_size = 128;
  c.lr = 1e-3;
  Mlp pi = train_bc(demos, c, rng);
  EXPECT_GT(evaluate_policy(spec, pi, 1, 1000000, 10), 0.0);
}

TEST(Relabel, Examples) {
  TaskSpec spec = TaskSpec::pick_place(1);
  Trajectory demo = record_expert_demo(spec, 3, false);
  RewardConfig cfg;
  RewardSeries same = relabel_episode(demo, demo, uniform_importance(demo.size()), cfg);
  EXPECT_LE(same.values.maxCoeff(), 0.0);
  EXPECT_GE(same.values.minCoeff(), -0.01 * cfg.scale);

  Trajectory other = record_expert_demo(spec, 4, false);
  ImportanceDistribution nu = build_importance({{demo.size() - 1}}, {}, {}, demo.size());
  RewardSeries plain = relabel_episode(other, demo, nu, cfg);
  cfg.bonus = 5.0;
  RewardSeries bonus = relabel_episode(other, demo, nu, cfg);
  ASSERT_TRUE(other.meta().success);
  for (Eigen::Index i = 0; i < plain.values.size(); ++i)
    EXPECT_NEAR(bonus.values[i] - plain.values[i], 5.0, 1e-12);
  EXPECT_THROW(relabel_episode(other, demo, uniform_importance(3), cfg), DimensionError);
}

}  // namespace
}  // namespace koi
