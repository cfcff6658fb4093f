#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "koi/learner.h"

namespace koi {

namespace detail {
class BinaryWriter;
class BinaryReader;
}  // namespace detail

// A finished episode ready for the buffer. rewards[t] belongs to the
// transition states[t] -> states[t + 1].
struct EpisodeRecord {
  Matrix states;   // T + 1 rows
  Matrix actions;  // T rows
  Vector rewards;  // T entries
  // Ended in a true terminal (task success) rather than a time limit.
  bool terminal = false;
};

// Ring of transitions inserted one episode at a time. n-step windows stop
// at the end of their own episode.
class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(Eigen::Index capacity, int state_dim, int action_dim);

  void add_episode(const EpisodeRecord& episode);

  Eigen::Index size() const { return size_; }
  Eigen::Index capacity() const { return capacity_; }

  Batch sample(int batch_size, int nstep, double gamma,
               std::mt19937_64& rng) const;
  // Windows starting at explicit slots (0 = oldest).
  Batch assemble(const std::vector<Eigen::Index>& slots, int nstep,
                 double gamma) const;

  void write(detail::BinaryWriter& out) const;
  static ReplayBuffer read(detail::BinaryReader& in);

 private:
  Eigen::Index physical(Eigen::Index slot) const;

  Eigen::Index capacity_ = 0;
  Eigen::Index size_ = 0;
  Eigen::Index head_ = 0;  // next physical write position
  Matrix states_, next_states_, actions_;
  Vector rewards_;
  std::vector<std::uint8_t> episode_end_, terminal_;
};

}  // namespace koi
