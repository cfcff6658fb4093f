#include "koi/semantic.h"

#include <gtest/gtest.h>

#include "koi/sim_env.h"

namespace koi {
namespace {

Trajectory framed_demo(int n) {
  std::vector<State> states(n);
  for (int i = 0; i < n; ++i) {
    states[i].features = Vector::Constant(2, 1.0 + i);
    states[i].frame = Frame::Constant(4, 4, i / double(n));
  }
  return Trajectory(std::move(states), {});
}

// Replies with a fixed list of index vectors, one per call.
class CannedAnnotator : public Annotator {
 public:
  explicit CannedAnnotator(std::vector<std::vector<int>> replies)
      : replies_(std::move(replies)) {}
  std::vector<std::string> decompose(const std::string&) override {
    return subgoals;
  }
  std::vector<int> select_keys(const QuerySet&, const SubgoalList&) override {
    return replies_.at(calls++);
  }
  std::vector<std::string> subgoals{"a", "b"};
  int calls = 0;

 private:
  std::vector<std::vector<int>> replies_;
};

class MalformedAnnotator : public CannedAnnotator {
 public:
  MalformedAnnotator() : CannedAnnotator({}) {}
  std::vector<int> select_keys(const QuerySet&, const SubgoalList&) override {
    ++calls;
    throw FormatError("bad reply", "indices: ten");
  }
};

TEST(SampleObservations, StrideTenWithFinalIndex) {
  QuerySet q = sample_observations(framed_demo(100), 10);
  EXPECT_EQ(q.indices, (std::vector<int>{0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 99}));
  ASSERT_EQ(q.frames.size(), q.indices.size());
  EXPECT_EQ(q.frames[3](0, 0), 30 / 100.0);
  EXPECT_EQ(q.demo_len(), 100);
}

TEST(SampleObservations, ShortDemo) {
  EXPECT_EQ(sample_observations(framed_demo(5), 10).indices, (std::vector<int>{0, 4}));
}

TEST(SampleObservations, FinalIndexOnGridIsNotDuplicated) {
  EXPECT_EQ(sample_observations(framed_demo(21), 10).indices,
            (std::vector<int>{0, 10, 20}));
}

TEST(SampleObservations, StrideOneTakesEveryIndex) {
  QuerySet q = sample_observations(framed_demo(7), 1);
  EXPECT_EQ(q.indices, (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(SampleObservations, Errors) {
  std::vector<State> bare(3);
  for (auto& s : bare) s.features = Vector::Ones(2);
  EXPECT_THROW(sample_observations(Trajectory(bare, {}), 10), InvariantError);
  EXPECT_THROW(sample_observations(framed_demo(5), 0), InvariantError);
}

TEST(ValidateMonotone, Examples) {
  EXPECT_EQ(validate_monotone({10, 40, 99}, 100).indices, (std::vector<int>{10, 40, 99}));
  EXPECT_THROW(validate_monotone({10, 10}, 100), TemporalConsistencyError);
  EXPECT_THROW(validate_monotone({10, 120}, 100), TemporalConsistencyError);
  EXPECT_THROW(validate_monotone({-1}, 100), TemporalConsistencyError);
  try {
    validate_monotone({5, 30, 20, 10}, 100);
    FAIL();
  } catch (const TemporalConsistencyError& e) {
    EXPECT_NE(std::string(e.what()).find("positions 1, 2"), std::string::npos);
  }
}

TEST(DecomposeTask, ScriptedSchema) {
  TaskSpec spec = TaskSpec::pick_place(2);
  ScriptedAnnotator scripted(spec.schema, std::vector<SubgoalEvent>{});
  SubgoalList list = decompose_task(spec.description, scripted);
  EXPECT_EQ(list.subgoals, (std::vector<std::string>{
                               "grasp object A", "place A in zone",
                               "grasp object B", "place B in zone"}));
  ScriptedAnnotator reach({"reach the target"}, std::vector<SubgoalEvent>{});
  EXPECT_EQ(decompose_task("reach", reach).size(), 1);
}

TEST(DecomposeTask, EmptyInputsRejected) {
  ScriptedAnnotator empty({}, std::vector<SubgoalEvent>{});
  EXPECT_THROW(decompose_task("task", empty), InvariantError);
  EXPECT_THROW(decompose_task("", empty), InvariantError);
  ScriptedAnnotator blank({"x", ""}, std::vector<SubgoalEvent>{});
  EXPECT_THROW(decompose_task("task", blank), InvariantError);
}

TEST(AnnotateSemantic, ScriptedMapsEventsToNextSample) {
  Trajectory demo = framed_demo(100);
  QuerySet q = sample_observations(demo, 10);
  ScriptedAnnotator a({"a", "b", "c"},
                      std::vector<SubgoalEvent>{{23, "a"}, {40, "b"}, {99, "c"}});
  SubgoalList list = decompose_task("t", a);
  EXPECT_EQ(annotate_semantic(q, list, a).indices, (std::vector<int>{30, 40, 99}));
}

TEST(AnnotateSemantic, NonMonotoneReplyIsRejectedAfterRetries) {
  QuerySet q = sample_observations(framed_demo(100), 10);
  CannedAnnotator a({{50, 30}, {50, 30}, {50, 30}, {30, 50}});
  SubgoalList list = decompose_task("t", a);
  EXPECT_THROW(annotate_semantic(q, list, a), TemporalConsistencyError);
  EXPECT_EQ(a.calls, 3);
}

TEST(AnnotateSemantic, RetryRecovers) {
  QuerySet q = sample_observations(framed_demo(100), 10);
  CannedAnnotator a({{50, 30}, {30, 50}});
  SubgoalList list = decompose_task("t", a);
  EXPECT_EQ(annotate_semantic(q, list, a).indices, (std::vector<int>{30, 50}));
  EXPECT_EQ(a.calls, 2);
}

TEST(AnnotateSemantic, OffGridAndWrongCountRejected) {
  QuerySet q = sample_observations(framed_demo(100), 10);
  CannedAnnotator off({{35, 50}});
  EXPECT_THROW(annotate_semantic(q, decompose_task("t", off), off, 0),
               TemporalConsistencyError);
  CannedAnnotator count(std::vector<std::vector<int>>{{30}});
  EXPECT_THROW(annotate_semantic(q, decompose_task("t", count), count, 0),
               TemporalConsistencyError);
}

TEST(AnnotateSemantic, MalformedReplyKeepsRawPayload) {
  QuerySet q = sample_observations(framed_demo(100), 10);
  MalformedAnnotator a;
  try {
    annotate_semantic(q, decompose_task("t", a), a);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.raw(), "indices: ten");
  }
  EXPECT_EQ(a.calls, 3);
}

TEST(AnnotateSemantic, SingleSubgoal) {
  QuerySet q = sample_observations(framed_demo(30), 10);
  ScriptedAnnotator a({"done"}, std::vector<SubgoalEvent>{{29, "done"}});
  EXPECT_EQ(annotate_semantic(q, decompose_task("t", a), a).indices,
            (std::vector<int>{29}));
}

TEST(AnnotateSemantic, ExpertDemosRecoverEventsWithinStride) {
  TaskSpec spec = TaskSpec::pick_place(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Trajectory demo = record_expert_demo(spec, seed, true);
    QuerySet q = sample_observations(demo, 10);
    ScriptedAnnotator a(spec.schema, demo);
    SubgoalList list = decompose_task(spec.description, a);
    SemanticIndexSet s = annotate_semantic(q, list, a);
    ASSERT_EQ(s.indices.size(), 4u);
    EXPECT_EQ(s.indices, annotate_semantic(q, list, a).indices);
    for (int k = 0; k < 4; ++k) {
      int event = demo.meta().events[k].index;
      EXPECT_GE(s.indices[k], event);
      EXPECT_LT(s.indices[k] - event, 10);
    }
    EXPECT_EQ(s.indices.back(), demo.size() - 1);
  }
}

}  // namespace
}  // namespace koi
