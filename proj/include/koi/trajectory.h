#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "koi/common.h"

namespace koi {

struct State {
  Vector features;
  std::optional<Frame> frame;
  std::optional<Vector> action;
  std::optional<Vector> proprio;
};

// A subgoal completed at a given state index.
struct SubgoalEvent {
  int index = 0;
  std::string label;

  bool operator==(const SubgoalEvent&) const = default;
};

struct TrajectoryMeta {
  std::string task;
  std::uint64_t seed = 0;
  bool success = false;
  std::vector<SubgoalEvent> events;
};

// Immutable sequence of states. The constructor enforces:
//   * at least two states;
//   * constant feature, action and proprio dimensions;
//   * constant frame size;
//   * finite values everywhere;
//   * strictly increasing, in-range event indices.
class Trajectory {
 public:
  Trajectory(std::vector<State> states, TrajectoryMeta meta);

  int size() const { return static_cast<int>(states_.size()); }
  const State& operator[](int i) const { return states_[i]; }
  const std::vector<State>& states() const { return states_; }
  const TrajectoryMeta& meta() const { return meta_; }

  int feature_dim() const { return static_cast<int>(states_[0].features.size()); }
  bool has_frames() const;
  // Every state but the last carries an action.
  bool has_actions() const;

  // Features stacked as rows (size() x feature_dim()).
  Matrix feature_matrix() const;
  std::vector<Frame> frames() const;

 private:
  std::vector<State> states_;
  TrajectoryMeta meta_;
};

inline constexpr std::uint32_t kTrajectoryFormatVersion = 1;

void save_trajectory(const Trajectory& t, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

// demos/<task>/<seed>.traj
std::filesystem::path demo_path(const std::filesystem::path& root,
                                const std::string& task, std::uint64_t seed);

}  // namespace koi
