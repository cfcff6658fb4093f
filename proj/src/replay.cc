#include "koi/replay.h"

#include <cmath>

#include "binary_io.h"

namespace koi {

ReplayBuffer::ReplayBuffer(Eigen::Index capacity, int state_dim, int action_dim)
    : capacity_(capacity),
      states_(capacity, state_dim),
      next_states_(capacity, state_dim),
      actions_(capacity, action_dim),
      rewards_(capacity),
      episode_end_(capacity),
      terminal_(capacity) {
  if (capacity < 1) throw InvariantError("replay capacity must be positive");
}

Eigen::Index ReplayBuffer::physical(Eigen::Index slot) const {
  return (head_ - size_ + slot + 2 * capacity_) % capacity_;
}

void ReplayBuffer::add_episode(const EpisodeRecord& ep) {
  const Eigen::Index t = ep.actions.rows();
  if (t < 1) throw InvariantError("episode has no transitions");
  if (ep.states.rows() != t + 1 || ep.rewards.size() != t)
    throw DimensionError("episode states/actions/rewards lengths disagree");
  if (ep.states.cols() != states_.cols() || ep.actions.cols() != actions_.cols())
    throw DimensionError("episode dimensions do not match the buffer");
  for (Eigen::Index i = 0; i < t; ++i) {
    states_.row(head_) = ep.states.row(i);
    next_states_.row(head_) = ep.states.row(i + 1);
    actions_.row(head_) = ep.actions.row(i);
    rewards_[head_] = ep.rewards[i];
    episode_end_[head_] = i + 1 == t;
    terminal_[head_] = i + 1 == t && ep.terminal;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }
}

Batch ReplayBuffer::assemble(const std::vector<Eigen::Index>& slots, int nstep,
                             double gamma) const {
  if (nstep < 1) throw InvariantError("n-step must be >= 1");
  const auto b = static_cast<Eigen::Index>(slots.size());
  Batch out;
  out.states.resize(b, states_.cols());
  out.actions.resize(b, actions_.cols());
  out.bootstrap_states.resize(b, states_.cols());
  out.returns.resize(b);
  out.discounts.resize(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    if (slots[i] < 0 || slots[i] >= size_)
      throw InvariantError("replay slot out of range");
    Eigen::Index p = physical(slots[i]);
    out.states.row(i) = states_.row(p);
    out.actions.row(i) = actions_.row(p);
    double ret = 0.0, discount = 1.0;
    for (int k = 0; k < nstep; ++k) {
      Eigen::Index q = physical(slots[i] + k);
      ret += discount * rewards_[q];
      discount *= gamma;
      if (episode_end_[q] || k + 1 == nstep) {
        out.bootstrap_states.row(i) = next_states_.row(q);
        out.discounts[i] = terminal_[q] ? 0.0 : discount;
        break;
      }
    }
    out.returns[i] = ret;
  }
  return out;
}

Batch ReplayBuffer::sample(int batch_size, int nstep, double gamma,
                           std::mt19937_64& rng) const {
  if (size_ == 0) throw InvariantError("cannot sample an empty replay buffer");
  std::uniform_int_distribution<Eigen::Index> pick(0, size_ - 1);
  std::vector<Eigen::Index> slots(batch_size);
  for (auto& s : slots) s = pick(rng);
  return assemble(slots, nstep, gamma);
}

void ReplayBuffer::write(detail::BinaryWriter& out) const {
  out.put<std::int64_t>(capacity_);
  out.put<std::int64_t>(size_);
  out.put<std::int64_t>(states_.cols());
  out.put<std::int64_t>(actions_.cols());
  // Oldest first, so the reader can rebuild with head at size.
  for (Eigen::Index s = 0; s < size_; ++s) {
    Eigen::Index p = physical(s);
    Vector row(states_.cols() * 2 + actions_.cols() + 1);
    row << states_.row(p).transpose(), next_states_.row(p).transpose(),
        actions_.row(p).transpose(), rewards_[p];
    out.put_doubles(row.data(), static_cast<std::size_t>(row.size()));
    out.put<std::uint8_t>(episode_end_[p] | (terminal_[p] << 1));
  }
}

ReplayBuffer ReplayBuffer::read(detail::BinaryReader& in) {
  auto capacity = in.get<std::int64_t>();
  auto size = in.get<std::int64_t>();
  auto sd = in.get<std::int64_t>();
  auto ad = in.get<std::int64_t>();
  if (capacity < 1 || size < 0 || size > capacity || sd < 1 || ad < 1 ||
      capacity > (std::int64_t{1} << 28))
    throw FormatError("replay buffer header out of range");
  ReplayBuffer buf(capacity, static_cast<int>(sd), static_cast<int>(ad));
  Vector row(sd * 2 + ad + 1);
  for (Eigen::Index s = 0; s < size; ++s) {
    in.get_doubles(row.data(), static_cast<std::size_t>(row.size()));
    buf.states_.row(s) = row.segment(0, sd).transpose();
    buf.next_states_.row(s) = row.segment(sd, sd).transpose();
    buf.actions_.row(s) = row.segment(2 * sd, ad).transpose();
    buf.rewards_[s] = row[2 * sd + ad];
    auto flags = in.get<std::uint8_t>();
    buf.episode_end_[s] = flags & 1;
    buf.terminal_[s] = (flags >> 1) & 1;
  }
  buf.size_ = size;
  buf.head_ = size % capacity;
  return buf;
}

}  // namespace koi
