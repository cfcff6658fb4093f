#include "koi/sim_env.h"

#include <cmath>

#include <gtest/gtest.h>

#include "koi/motion.h"

namespace koi {
namespace {

Vector action(double dx, double dy, double grip) {
  Vector a(3);
  a << dx, dy, grip;
  return a;
}

TEST(SimEnv, ResetIsDeterministic) {
  PickPlaceEnv a(TaskSpec::pick_place(2)), b(TaskSpec::pick_place(2));
  StepResult ra = a.reset(17), rb = b.reset(17);
  EXPECT_EQ(ra.features, rb.features);
  EXPECT_EQ(ra.frame, rb.frame);
  EXPECT_EQ(a.state(), b.state());
  StepResult rc = b.reset(18);
  EXPECT_NE(ra.features, rc.features);
}

TEST(SimEnv, FeatureDimensionMatchesSpec) {
  for (int objects : {1, 2}) {
    TaskSpec spec = TaskSpec::pick_place(objects);
    PickPlaceEnv env(spec);
    EXPECT_EQ(env.reset(0).features.size(), spec.feature_dim());
    EXPECT_EQ(env.step(action(1, 1, 1)).features.size(), spec.feature_dim());
  }
}

TEST(SimEnv, SpawnInsideRegions) {
  TaskSpec spec = TaskSpec::pick_place(2);
  PickPlaceEnv env(spec);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    env.reset(seed);
    for (int k = 0; k < 2; ++k)
      EXPECT_TRUE(spec.spawn[k].contains(env.state().objects[k].x,
                                         env.state().objects[k].y));
    EXPECT_EQ(env.state().gripper_x, spec.home_x);
    EXPECT_FALSE(env.state().gripper_closed);
  }
}

TEST(SimEnv, ZeroActionChangesNothingButTheClock) {
  PickPlaceEnv env(TaskSpec::pick_place(2));
  StepResult before = env.reset(3);
  WorldState s0 = env.state();
  StepResult after = env.step(action(0, 0, 0));
  WorldState s1 = env.state();
  EXPECT_EQ(s1.steps, 1);
  s1.steps = 0;
  EXPECT_EQ(s0, s1);
  EXPECT_EQ(before.frame, after.frame);
  EXPECT_EQ(before.features, after.features);
  EXPECT_TRUE(after.events.empty());
}

TEST(SimEnv, ActionsAreClamped) {
  TaskSpec spec = TaskSpec::pick_place(1);
  PickPlaceEnv a(spec), b(spec);
  a.reset(0);
  b.reset(0);
  a.step(action(50, -7, 3));
  b.step(action(1, -1, 1));
  EXPECT_EQ(a.state(), b.state());
  EXPECT_NEAR(a.state().gripper_x, spec.home_x + spec.max_step, 1e-15);
  EXPECT_THROW(a.step(Vector::Zero(2)), DimensionError);
}

TEST(SimEnv, ExpertSucceedsWithEventsInSchemaOrder) {
  for (int objects : {1, 2}) {
    TaskSpec spec = TaskSpec::pick_place(objects);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Trajectory demo = record_expert_demo(spec, seed, false);
      ASSERT_TRUE(demo.meta().success) << "seed " << seed;
      ASSERT_EQ(demo.meta().events.size(), spec.schema.size());
      for (std::size_t i = 0; i < spec.schema.size(); ++i)
        EXPECT_EQ(demo.meta().events[i].label, spec.schema[i]);
      EXPECT_EQ(demo.meta().events.back().index,
                static_cast<int>(demo.size()) - 1);
      EXPECT_LE(static_cast<int>(demo.size()) - 1, spec.expert_step_bound());
    }
  }
}

TEST(SimEnv, SubgoalsAreAtLeastOneGridStepApart) {
  TaskSpec spec = TaskSpec::pick_place(2);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Trajectory demo = record_expert_demo(spec, seed, false);
    int prev = 0;
    for (const auto& e : demo.meta().events) {
      EXPECT_GT(e.index - prev, 10) << "seed " << seed;
      prev = e.index;
    }
  }
}

TEST(SimEnv, StepLimitWithoutCompletion) {
  TaskSpec spec = TaskSpec::pick_place(1);
  PickPlaceEnv env(spec);
  env.reset(5);
  StepResult r;
  for (int t = 0; t < spec.step_limit; ++t) {
    EXPECT_FALSE(env.done());
    r = env.step(action(-1, 1, -1));
  }
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.success);
}

TEST(SimEnv, ReleaseOutsideZoneIsNotAPlace) {
  TaskSpec spec = TaskSpec::pick_place(1);
  PickPlaceEnv env(spec);
  env.reset(2);
  while (!env.state().objects[0].held)
    env.step(scripted_expert(spec, env.state()));
  StepResult r = env.step(action(0, 0, -1));
  EXPECT_TRUE(r.events.empty());
  EXPECT_FALSE(env.state().objects[0].held);
  EXPECT_FALSE(env.state().objects[0].placed);
  EXPECT_EQ(env.state().next_subgoal, 1);
}

TEST(SimEnv, RenderIsDeterministicAndDistinct) {
  TaskSpec spec = TaskSpec::pick_place(2);
  PickPlaceEnv env(spec);
  env.reset(9);
  Frame f = render_frame(spec, env.state());
  EXPECT_EQ(f, render_frame(spec, env.state()));
  EXPECT_EQ(f.rows(), 64);
  EXPECT_GE(f.minCoeff(), 0.0);
  EXPECT_LE(f.maxCoeff(), 1.0);
}

TEST(SimEnv, DisplacedObjectChangesOnlyItsSweptRegion) {
  TaskSpec spec = TaskSpec::pick_place(2);
  PickPlaceEnv env(spec);
  env.reset(4);
  WorldState s = env.state();
  // Align to pixel centres so the shift is exactly 2 px.
  s.objects[0].x = (20 + 0.5) / 64.0;
  s.objects[0].y = 1.0 - (45 + 0.5) / 64.0;
  WorldState moved = s;
  moved.objects[0].x += 2.0 / 64.0;
  Frame a = render_frame(spec, s), b = render_frame(spec, moved);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      bool swept = r >= 45 - 3 && r <= 45 + 2 && c >= 20 - 3 && c <= 22 + 2;
      if (!swept) EXPECT_EQ(a(r, c), b(r, c)) << r << "," << c;
    }
  EXPECT_NE(a, b);
}

TEST(SimEnv, StaticSceneHasNoFlow) {
  PickPlaceEnv env(TaskSpec::pick_place(1));
  StepResult a = env.reset(1);
  StepResult b = env.step(action(0, 0, 0));
  FlowField f = farneback_flow(a.frame, b.frame, {});
  EXPECT_LT(flow_magnitude(f), 1e-9);
}

TEST(SimEnv, ExpertFramesMove) {
  Trajectory demo = record_expert_demo(TaskSpec::pick_place(1), 0, true);
  ASSERT_TRUE(demo.has_frames());
  std::vector<double> mags = consecutive_flow_magnitudes(demo.frames());
  double total = 0.0;
  for (double m : mags) total += m;
  EXPECT_GT(total / mags.size(), 0.05);
}

TEST(SimEnv, TaskValidation) {
  TaskSpec spec = TaskSpec::pick_place(2);
  spec.step_limit = spec.expert_step_bound();
  EXPECT_THROW(spec.validate(), InvariantError);
  EXPECT_THROW(TaskSpec::pick_place(3), InvariantError);
  EXPECT_THROW(TaskSpec::by_name("stack"), InvariantError);
  EXPECT_EQ(TaskSpec::by_name("pick-place-1").object_count(), 1);
}

}  // namespace
}  // namespace koi
