#include "koi/sim_env.h"

#include <algorithm>
#include <cmath>
#include <random>

namespace koi {
namespace {

constexpr const char* kObjectNames[] = {"A", "B"};

std::uint32_t hash2(std::uint32_t x, std::uint32_t y) {
  std::uint32_t h = x * 0x9E3779B1u ^ (y + 0x7F4A7C15u) * 0x85EBCA77u;
  h ^= h >> 15;
  h *= 0x2C1B3C6Du;
  h ^= h >> 12;
  h *= 0x297A2D39u;
  h ^= h >> 15;
  return h;
}

double unit_hash(int x, int y) {
  return (hash2(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) &
          0xFFFFFF) /
         static_cast<double>(0x1000000);
}

// Fixed background: bilinear value noise on a 4-px lattice plus fine grain.
double background(int row, int col) {
  constexpr int kCell = 4;
  int gx = col / kCell, gy = row / kCell;
  double fx = (col % kCell) / double(kCell), fy = (row % kCell) / double(kCell);
  double v = (1 - fy) * ((1 - fx) * unit_hash(gx, gy) + fx * unit_hash(gx + 1, gy)) +
             fy * ((1 - fx) * unit_hash(gx, gy + 1) + fx * unit_hash(gx + 1, gy + 1));
  return 0.15 + 0.25 * v + 0.05 * unit_hash(col + 1000, row + 1000);
}

double dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

// Steps needed to cover `d` with per-axis moves of at most `step`.
int steps_for(double d, double step) {
  return static_cast<int>(std::ceil(d / step - 1e-9));
}

double farthest_corner(double x, double y, const Box& b) {
  double best = 0.0;
  for (double cx : {b.x_min, b.x_max})
    for (double cy : {b.y_min, b.y_max}) best = std::max(best, dist(x, y, cx, cy));
  return best;
}

}  // namespace

int TaskSpec::expert_step_bound() const {
  int steps = 0;
  double x = home_x, y = home_y;
  for (int k = 0; k < object_count(); ++k) {
    steps += steps_for(farthest_corner(x, y, spawn[k]), max_step);
    steps += steps_for(farthest_corner(zones[k].cx(), zones[k].cy(), spawn[k]),
                       max_step);
    x = zones[k].cx();
    y = zones[k].cy();
  }
  // One extra step per subgoal for gripper actuation.
  return (steps + static_cast<int>(schema.size()) + action_repeat - 1) /
         action_repeat;
}

void TaskSpec::validate() const {
  if (schema.empty()) throw InvariantError("task schema is empty");
  if (object_count() < 1 || object_count() > 2 ||
      zones.size() != spawn.size())
    throw InvariantError("task needs 1 or 2 objects, each with a zone");
  if (schema.size() != 2 * spawn.size())
    throw InvariantError("schema must list a grasp and a place per object");
  if (frame_size < 16) throw InvariantError("frame size must be >= 16");
  if (action_repeat < 1) throw InvariantError("action repeat must be >= 1");
  if (step_limit < 2 * expert_step_bound())
    throw InvariantError("step limit " + std::to_string(step_limit) +
                         " is below twice the expert path bound " +
                         std::to_string(expert_step_bound()));
}

TaskSpec TaskSpec::pick_place(int objects) {
  TaskSpec spec;
  if (objects == 1) {
    spec.name = "pick-place-1";
    spec.description = "put object A in its zone";
    spec.step_limit = 120;
  } else if (objects == 2) {
    spec.name = "pick-place-2";
    spec.description = "put object A in zone A and then object B in zone B";
    spec.step_limit = 200;
  } else {
    throw InvariantError("pick-place supports 1 or 2 objects");
  }
  const Box spawn_regions[] = {{0.10, 0.10, 0.40, 0.30},
                               {0.60, 0.10, 0.90, 0.30}};
  const Box zone_regions[] = {{0.15, 0.72, 0.35, 0.88},
                              {0.65, 0.72, 0.85, 0.88}};
  for (int k = 0; k < objects; ++k) {
    spec.spawn.push_back(spawn_regions[k]);
    spec.zones.push_back(zone_regions[k]);
    spec.schema.push_back(std::string("grasp object ") + kObjectNames[k]);
    spec.schema.push_back(std::string("place ") + kObjectNames[k] + " in zone");
  }
  spec.validate();
  return spec;
}

TaskSpec TaskSpec::by_name(const std::string& name) {
  if (name == "pick-place-1") return pick_place(1);
  if (name == "pick-place-2") return pick_place(2);
  throw InvariantError("unknown task '" + name + "'");
}

Vector world_features(const TaskSpec& spec, const WorldState& state) {
  Vector f(spec.feature_dim());
  int k = 0;
  f[k++] = 2.0 * state.gripper_x - 1.0;
  f[k++] = 2.0 * state.gripper_y - 1.0;
  for (const auto& o : state.objects) {
    f[k++] = 2.0 * o.x - 1.0;
    f[k++] = 2.0 * o.y - 1.0;
    f[k++] = o.held ? 1.0 : 0.0;
  }
  f[k++] = 1.0;  // keeps the vector away from zero norm
  return f;
}

Frame render_frame(const TaskSpec& spec, const WorldState& state) {
  const int n = spec.frame_size;
  Frame f(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) f(r, c) = background(r, c);

  auto to_px = [n](double x, double y) {
    return std::pair<int, int>{static_cast<int>(std::lround((1.0 - y) * n - 0.5)),
                               static_cast<int>(std::lround(x * n - 0.5))};
  };
  for (const Box& z : spec.zones) {
    auto [r0, c0] = to_px(z.x_min, z.y_max);
    auto [r1, c1] = to_px(z.x_max, z.y_min);
    for (int r = std::max(r0, 0); r <= std::min(r1, n - 1); ++r)
      for (int c = std::max(c0, 0); c <= std::min(c1, n - 1); ++c)
        f(r, c) = 0.45 + 0.5 * (f(r, c) - 0.15);
  }
  const double object_level[] = {0.92, 0.05};
  for (std::size_t k = 0; k < state.objects.size(); ++k) {
    auto [r0, c0] = to_px(state.objects[k].x, state.objects[k].y);
    for (int dr = -3; dr <= 2; ++dr)
      for (int dc = -3; dc <= 2; ++dc) {
        int r = r0 + dr, c = c0 + dc;
        if (r < 0 || r >= n || c < 0 || c >= n) continue;
        bool checker = ((dr + dc) & 1) != 0;
        f(r, c) = object_level[k] + (checker ? 0.03 : 0.0);
      }
  }
  auto [gr, gc] = to_px(state.gripper_x, state.gripper_y);
  for (int dr = -4; dr <= 4; ++dr)
    for (int dc = -4; dc <= 4; ++dc) {
      int r = gr + dr, c = gc + dc;
      if (r < 0 || r >= n || c < 0 || c >= n) continue;
      int d2 = dr * dr + dc * dc;
      bool ring = d2 >= 9 && d2 <= 16;
      bool core = state.gripper_closed && d2 <= 2;
      if (ring || core) f(r, c) = 1.0;
    }
  return f;
}

Vector scripted_expert(const TaskSpec& spec, const WorldState& state) {
  Vector a = Vector::Zero(TaskSpec::kActionDim);
  int active = -1;
  for (int k = 0; k < static_cast<int>(state.objects.size()); ++k)
    if (!state.objects[k].placed) {
      active = k;
      break;
    }
  if (active < 0) return a;
  const ObjectState& obj = state.objects[active];
  const Box& zone = spec.zones[active];
  double tx = obj.held ? zone.cx() : obj.x;
  double ty = obj.held ? zone.cy() : obj.y;
  a[0] = std::clamp((tx - state.gripper_x) / spec.max_step, -1.0, 1.0);
  a[1] = std::clamp((ty - state.gripper_y) / spec.max_step, -1.0, 1.0);
  double nx = state.gripper_x + a[0] * spec.max_step;
  double ny = state.gripper_y + a[1] * spec.max_step;
  if (obj.held) {
    // Release once the object will sit well inside the zone.
    bool inside = std::abs(nx - zone.cx()) <= 0.25 * (zone.x_max - zone.x_min) &&
                  std::abs(ny - zone.cy()) <= 0.25 * (zone.y_max - zone.y_min);
    a[2] = inside ? -1.0 : 1.0;
  } else {
    a[2] = dist(nx, ny, obj.x, obj.y) <= 0.5 * spec.grasp_radius ? 1.0 : -1.0;
  }
  return a;
}

PickPlaceEnv::PickPlaceEnv(TaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

StepResult PickPlaceEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  state_ = WorldState{};
  state_.gripper_x = spec_.home_x;
  state_.gripper_y = spec_.home_y;
  for (const Box& b : spec_.spawn) {
    std::uniform_real_distribution<double> ux(b.x_min, b.x_max);
    std::uniform_real_distribution<double> uy(b.y_min, b.y_max);
    ObjectState o;
    o.x = ux(rng);
    o.y = uy(rng);
    state_.objects.push_back(o);
  }
  return {features(), frame(), false, false, {}};
}

int PickPlaceEnv::active_object() const {
  for (int k = 0; k < static_cast<int>(state_.objects.size()); ++k)
    if (!state_.objects[k].placed) return k;
  return -1;
}

bool PickPlaceEnv::success() const {
  return state_.next_subgoal == static_cast<int>(spec_.schema.size());
}

bool PickPlaceEnv::done() const {
  return success() || state_.steps >= spec_.step_limit;
}

void PickPlaceEnv::apply(const Vector& action,
                         std::vector<SubgoalEvent>& events) {
  double dx = std::clamp(action[0], -1.0, 1.0);
  double dy = std::clamp(action[1], -1.0, 1.0);
  double grip = std::clamp(action[2], -1.0, 1.0);
  if (!std::isfinite(dx)) dx = 0.0;
  if (!std::isfinite(dy)) dy = 0.0;
  if (!std::isfinite(grip)) grip = 0.0;

  state_.gripper_x = std::clamp(state_.gripper_x + dx * spec_.max_step, 0.0, 1.0);
  state_.gripper_y = std::clamp(state_.gripper_y + dy * spec_.max_step, 0.0, 1.0);
  ++state_.steps;

  auto fire = [&](int subgoal) {
    if (state_.next_subgoal == subgoal) {
      events.push_back({state_.steps, spec_.schema[subgoal]});
      ++state_.next_subgoal;
    }
  };

  int active = active_object();
  for (auto& o : state_.objects)
    if (o.held) {
      o.x = state_.gripper_x;
      o.y = state_.gripper_y;
    }

  if (grip > 0.5) {
    state_.gripper_closed = true;
    bool holding = std::any_of(state_.objects.begin(), state_.objects.end(),
                               [](const ObjectState& o) { return o.held; });
    if (!holding && active >= 0) {
      ObjectState& o = state_.objects[active];
      if (dist(o.x, o.y, state_.gripper_x, state_.gripper_y) <=
          spec_.grasp_radius) {
        o.held = true;
        o.x = state_.gripper_x;
        o.y = state_.gripper_y;
        fire(2 * active);
      }
    }
  } else if (grip < -0.5) {
    state_.gripper_closed = false;
    for (int k = 0; k < static_cast<int>(state_.objects.size()); ++k) {
      ObjectState& o = state_.objects[k];
      if (!o.held) continue;
      o.held = false;
      if (spec_.zones[k].contains(o.x, o.y)) {
        o.placed = true;
        fire(2 * k + 1);
      }
    }
  }
}

StepResult PickPlaceEnv::step(const Vector& action) {
  if (action.size() != TaskSpec::kActionDim)
    throw DimensionError("action must have 3 components");
  StepResult result;
  for (int k = 0; k < spec_.action_repeat && !done(); ++k)
    apply(action, result.events);
  result.features = features();
  result.frame = frame();
  result.success = success();
  result.done = done();
  return result;
}

Trajectory rollout(const TaskSpec& spec, std::uint64_t seed,
                   const std::function<Vector(const WorldState&, const Vector&)>&
                       policy,
                   const RolloutOptions& options) {
  PickPlaceEnv env(spec);
  StepResult r = env.reset(seed);
  std::vector<State> states;
  TrajectoryMeta meta{spec.name, seed, false, {}};
  State current;
  current.features = r.features;
  if (options.render) current.frame = std::move(r.frame);
  const int limit = options.max_steps > 0 ? options.max_steps : spec.step_limit;
  int t = 0;
  while (!env.done() && t < limit) {
    Vector a = policy(env.state(), current.features);
    if (options.record_actions) current.action = a;
    states.push_back(std::move(current));
    r = env.step(a);
    ++t;
    for (auto& e : r.events) meta.events.push_back({t, e.label});
    current = State{};
    current.features = r.features;
    if (options.render) current.frame = std::move(r.frame);
  }
  states.push_back(std::move(current));
  meta.success = env.success();
  return Trajectory(std::move(states), std::move(meta));
}

Trajectory record_expert_demo(const TaskSpec& spec, std::uint64_t seed,
                              bool render) {
  return rollout(
      spec, seed,
      [&spec](const WorldState& s, const Vector&) {
        return scripted_expert(spec, s);
      },
      {.render = render});
}

}  // namespace koi
