#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "koi/common.h"
#include "koi/trajectory.h"

namespace koi {

struct Box {
  double x_min, y_min, x_max, y_max;

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
};

// Geometry and schema of a pick-and-place task in the unit square.
struct TaskSpec {
  std::string name;
  std::string description;
  // One spawn region and one target zone per object, in pick order.
  std::vector<Box> spawn;
  std::vector<Box> zones;
  // Ordered subgoal labels: grasp/place per object.
  std::vector<std::string> schema;
  int step_limit = 0;
  int frame_size = 64;
  double home_x = 0.5, home_y = 0.9;
  double max_step = 0.04;
  double grasp_radius = 0.08;
  // Consecutive env steps per policy action.
  int action_repeat = 1;

  int object_count() const { return static_cast<int>(spawn.size()); }
  // gripper (x, y), per object (x, y, held), constant 1.
  int feature_dim() const { return 2 + 3 * object_count() + 1; }
  static constexpr int kActionDim = 3;

  // Upper bound on expert episode length from the workspace geometry.
  int expert_step_bound() const;
  void validate() const;

  // "pick-place-1" or "pick-place-2".
  static TaskSpec pick_place(int objects);
  static TaskSpec by_name(const std::string& name);
};

struct ObjectState {
  double x = 0.0, y = 0.0;
  bool held = false;
  bool placed = false;

  bool operator==(const ObjectState&) const = default;
};

struct WorldState {
  double gripper_x = 0.0, gripper_y = 0.0;
  bool gripper_closed = false;
  std::vector<ObjectState> objects;
  // Index of the next schema subgoal to complete.
  int next_subgoal = 0;
  int steps = 0;

  bool operator==(const WorldState&) const = default;
};

struct StepResult {
  Vector features;
  Frame frame;
  bool done = false;
  bool success = false;
  // Subgoals completed during this step (env step index in `index`).
  std::vector<SubgoalEvent> events;
};

Vector world_features(const TaskSpec& spec, const WorldState& state);
Frame render_frame(const TaskSpec& spec, const WorldState& state);
// Waypoint controller: next unplaced object, then its zone.
Vector scripted_expert(const TaskSpec& spec, const WorldState& state);

class PickPlaceEnv {
 public:
  explicit PickPlaceEnv(TaskSpec spec);

  // Object positions drawn from `seed` inside the spawn regions; gripper
  // at home, open.
  StepResult reset(std::uint64_t seed);
  // Action (dx, dy, grip), each clamped to [-1, 1]. grip > 0.5 closes the
  // gripper, grip < -0.5 opens it, anything between keeps its state.
  StepResult step(const Vector& action);

  const WorldState& state() const { return state_; }
  const TaskSpec& spec() const { return spec_; }
  bool success() const;
  bool done() const;
  Vector features() const { return world_features(spec_, state_); }
  Frame frame() const { return render_frame(spec_, state_); }

 private:
  void apply(const Vector& action, std::vector<SubgoalEvent>& events);
  int active_object() const;

  TaskSpec spec_;
  WorldState state_;
};

struct RolloutOptions {
  bool render = true;
  bool record_actions = true;
  // Stop early; 0 keeps the task's step limit.
  int max_steps = 0;
};

// Runs `policy` from reset(seed) until done. Event indices refer to the
// state reached after the completing step.
Trajectory rollout(const TaskSpec& spec, std::uint64_t seed,
                   const std::function<Vector(const WorldState&,
                                              const Vector&)>& policy,
                   const RolloutOptions& options = {});

Trajectory record_expert_demo(const TaskSpec& spec, std::uint64_t seed,
                              bool render = true);

}  // namespace koi
