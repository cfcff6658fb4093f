#include "koi/trajectory.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.h"

namespace koi {
namespace {

constexpr char kMagic[8] = {'K', 'O', 'I', 'T', 'R', 'A', 'J', '\0'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '\0'};

enum StateFlags : std::uint8_t {
  kHasFrame = 1 << 0,
  kHasAction = 1 << 1,
  kHasProprio = 1 << 2,
};

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& v, int state,
                    const char* what) {
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v.derived().data()[k])) {
      std::ostringstream msg;
      msg << "non-finite " << what << " value at state " << state
          << ", component " << k;
      throw InvariantError(msg.str());
    }
  }
}

}  // namespace

Trajectory::Trajectory(std::vector<State> states, TrajectoryMeta meta)
    : states_(std::move(states)), meta_(std::move(meta)) {
  if (states_.size() < 2)
    throw InvariantError("trajectory needs at least 2 states, got " +
                         std::to_string(states_.size()));
  const State& first = states_.front();
  if (first.features.size() == 0)
    throw InvariantError("feature vectors must be non-empty");
  for (int i = 0; i < size(); ++i) {
    const State& s = states_[i];
    if (s.features.size() != first.features.size())
      throw InvariantError("feature dimension changes at state " +
                           std::to_string(i));
    require_finite(s.features, i, "feature");
    if (s.frame) {
      if (s.frame->size() == 0)
        throw InvariantError("empty frame at state " + std::to_string(i));
      for (int j = 0; j < i; ++j) {
        if (states_[j].frame) {
          if (states_[j].frame->rows() != s.frame->rows() ||
              states_[j].frame->cols() != s.frame->cols())
            throw InvariantError("frame size changes at state " +
                                 std::to_string(i));
          break;
        }
      }
      require_finite(*s.frame, i, "frame");
    }
    auto check_optional = [&](const std::optional<Vector>& v,
                              auto member, const char* what) {
      if (!v) return;
      require_finite(*v, i, what);
      for (int j = 0; j < i; ++j) {
        const auto& prev = states_[j].*member;
        if (prev) {
          if (prev->size() != v->size())
            throw InvariantError(std::string(what) +
                                 " dimension changes at state " +
                                 std::to_string(i));
          break;
        }
      }
    };
    check_optional(s.action, &State::action, "action");
    check_optional(s.proprio, &State::proprio, "proprio");
  }
  int prev = -1;
  for (const auto& e : meta_.events) {
    if (e.index <= prev || e.index >= size())
      throw InvariantError("subgoal event indices must be strictly increasing "
                           "and inside the trajectory (event '" +
                           e.label + "' at " + std::to_string(e.index) + ")");
    prev = e.index;
  }
}

bool Trajectory::has_frames() const {
  for (const auto& s : states_)
    if (!s.frame) return false;
  return true;
}

bool Trajectory::has_actions() const {
  for (std::size_t i = 0; i + 1 < states_.size(); ++i)
    if (!states_[i].action) return false;
  return true;
}

Matrix Trajectory::feature_matrix() const {
  Matrix m(size(), feature_dim());
  for (int i = 0; i < size(); ++i) m.row(i) = states_[i].features.transpose();
  return m;
}

std::vector<Frame> Trajectory::frames() const {
  std::vector<Frame> out;
  out.reserve(states_.size());
  for (int i = 0; i < size(); ++i) {
    if (!states_[i].frame)
      throw InvariantError("state " + std::to_string(i) + " has no frame");
    out.push_back(*states_[i].frame);
  }
  return out;
}

void save_trajectory(const Trajectory& t, const std::filesystem::path& path) {
  // Dimensions declared once in the header; per-state flags mark which
  // optional payloads follow.
  std::uint64_t frame_rows = 0, frame_cols = 0, action_dim = 0,
                proprio_dim = 0;
  for (const auto& s : t.states()) {
    if (s.frame) frame_rows = s.frame->rows(), frame_cols = s.frame->cols();
    if (s.action) action_dim = s.action->size();
    if (s.proprio) proprio_dim = s.proprio->size();
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    detail::BinaryWriter w(out);
    out.write(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kTrajectoryFormatVersion);

    const auto& meta = t.meta();
    w.put_string(meta.task);
    w.put<std::uint64_t>(meta.seed);
    w.put<std::uint8_t>(meta.success ? 1 : 0);
    w.put<std::uint64_t>(meta.events.size());
    for (const auto& e : meta.events) {
      w.put<std::int64_t>(e.index);
      w.put_string(e.label);
    }

    w.put<std::uint64_t>(t.size());
    w.put<std::uint64_t>(t.feature_dim());
    w.put<std::uint64_t>(action_dim);
    w.put<std::uint64_t>(proprio_dim);
    w.put<std::uint64_t>(frame_rows);
    w.put<std::uint64_t>(frame_cols);

    for (const auto& s : t.states()) {
      std::uint8_t flags = (s.frame ? kHasFrame : 0) |
                           (s.action ? kHasAction : 0) |
                           (s.proprio ? kHasProprio : 0);
      w.put<std::uint8_t>(flags);
      w.put_doubles(s.features.data(), s.features.size());
      if (s.frame) w.put_doubles(s.frame->data(), s.frame->size());
      if (s.action) w.put_doubles(s.action->data(), s.action->size());
      if (s.proprio) w.put_doubles(s.proprio->data(), s.proprio->size());
    }
    out.write(kTrailer, sizeof(kTrailer));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move trajectory into '" + path.string() +
                  "': " + ec.message());
  }
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  detail::BinaryReader r(in);

  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("'" + path.string() + "' is not a trajectory file");
  auto version = r.get<std::uint32_t>();
  if (version != kTrajectoryFormatVersion)
    throw FormatError("unsupported trajectory format version " +
                      std::to_string(version));

  TrajectoryMeta meta;
  meta.task = r.get_string();
  meta.seed = r.get<std::uint64_t>();
  meta.success = r.get<std::uint8_t>() != 0;
  auto n_events = r.get<std::uint64_t>();
  if (n_events > (1u << 20)) throw FormatError("event count out of range");
  for (std::uint64_t k = 0; k < n_events; ++k) {
    SubgoalEvent e;
    e.index = static_cast<int>(r.get<std::int64_t>());
    e.label = r.get_string();
    meta.events.push_back(std::move(e));
  }

  auto n = r.get<std::uint64_t>();
  auto feature_dim = r.get<std::uint64_t>();
  auto action_dim = r.get<std::uint64_t>();
  auto proprio_dim = r.get<std::uint64_t>();
  auto rows = r.get<std::uint64_t>();
  auto cols = r.get<std::uint64_t>();
  constexpr std::uint64_t kLimit = 1u << 24;
  if (n > kLimit || feature_dim > kLimit || action_dim > kLimit ||
      proprio_dim > kLimit || rows > 1u << 14 || cols > 1u << 14)
    throw FormatError("trajectory header dimensions out of range");

  std::vector<State> states;
  states.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    State s;
    auto flags = r.get<std::uint8_t>();
    s.features.resize(feature_dim);
    r.get_doubles(s.features.data(), feature_dim);
    if (flags & kHasFrame) {
      Frame f(rows, cols);
      r.get_doubles(f.data(), f.size());
      s.frame = std::move(f);
    }
    if (flags & kHasAction) {
      Vector a(action_dim);
      r.get_doubles(a.data(), action_dim);
      s.action = std::move(a);
    }
    if (flags & kHasProprio) {
      Vector p(proprio_dim);
      r.get_doubles(p.data(), proprio_dim);
      s.proprio = std::move(p);
    }
    states.push_back(std::move(s));
  }
  char trailer[sizeof(kTrailer)];
  in.read(trailer, sizeof(trailer));
  if (in.gcount() != sizeof(trailer) ||
      std::memcmp(trailer, kTrailer, sizeof(kTrailer)) != 0)
    throw FormatError("trajectory file '" + path.string() + "' is truncated");

  return Trajectory(std::move(states), std::move(meta));
}

std::filesystem::path demo_path(const std::filesystem::path& root,
                                const std::string& task, std::uint64_t seed) {
  return root / task / (std::to_string(seed) + ".traj");
}

}  // namespace koi
