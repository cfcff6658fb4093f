#include "koi/train.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.h"
#include "mlp_io.h"

namespace koi {
namespace {

constexpr char kCheckpointMagic[8] = {'K', 'O', 'I', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t train_episode_seed(std::uint64_t seed, int episode) {
  return 2000000 + seed * 100000 + static_cast<std::uint64_t>(episode);
}

// Rolling window of the last k feature vectors as one policy input.
class FeatureWindow {
 public:
  FeatureWindow(int k, const Vector& first) : k_(k), rows_{first} {}
  void push(const Vector& f) { rows_.push_back(f); }
  Matrix current() const {
    const Eigen::Index d = rows_[0].size();
    Matrix x(1, k_ * d);
    const int t = static_cast<int>(rows_.size()) - 1;
    for (int j = 0; j < k_; ++j)
      x.block(0, j * d, 1, d) = rows_[std::max(0, t - (k_ - 1) + j)].transpose();
    return x;
  }
  Matrix all() const {
    Matrix m(rows_.size(), rows_[0].size());
    for (std::size_t i = 0; i < rows_.size(); ++i) m.row(i) = rows_[i].transpose();
    return m;
  }

 private:
  int k_;
  std::vector<Vector> rows_;
};

struct LoopState {
  ActorCritic ac;
  ReplayBuffer buffer;
  std::mt19937_64 rng;
  std::int64_t steps = 0;
  int episode = 0;
  std::int64_t next_eval = 0;
  bool has_encoder = false;
  Mlp encoder;
  std::int64_t next_encoder_refresh = 0;
  TrainLog log;
};

void write_adam(detail::BinaryWriter& w, const Adam& a) {
  w.put<double>(a.options().lr);
  w.put<double>(a.options().beta1);
  w.put<double>(a.options().beta2);
  w.put<double>(a.options().eps);
  w.put<std::int64_t>(a.t);
  w.put_matrix(a.m);
  w.put_matrix(a.v);
}

Adam read_adam(detail::BinaryReader& r) {
  AdamOptions o;
  o.lr = r.get<double>();
  o.beta1 = r.get<double>();
  o.beta2 = r.get<double>();
  o.eps = r.get<double>();
  auto t = r.get<std::int64_t>();
  Matrix m = r.get_matrix(), v = r.get_matrix();
  Adam a(m.size(), o);
  a.t = t;
  a.m = Eigen::Map<const Vector>(m.data(), m.size());
  a.v = Eigen::Map<const Vector>(v.data(), v.size());
  return a;
}

void save_checkpoint(const std::filesystem::path& path, const LoopState& s,
                     std::uint64_t seed) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    detail::BinaryWriter w(out);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    w.put<std::uint32_t>(kCheckpointFormatVersion);
    w.put<std::uint64_t>(seed);
    w.put<std::int64_t>(s.steps);
    w.put<std::int32_t>(s.episode);
    w.put<std::int64_t>(s.next_eval);
    std::ostringstream rng;
    rng << s.rng;
    w.put_string(rng.str());
    detail::write_mlp(w, s.ac.actor);
    detail::write_mlp(w, s.ac.critic);
    detail::write_mlp(w, s.ac.target_critic);
    write_adam(w, s.ac.actor_opt);
    write_adam(w, s.ac.critic_opt);
    w.put<std::uint8_t>(s.ac.twin);
    if (s.ac.twin) {
      detail::write_mlp(w, s.ac.critic2);
      detail::write_mlp(w, s.ac.target_critic2);
      write_adam(w, s.ac.critic2_opt);
    }
    w.put<std::uint8_t>(s.has_encoder);
    if (s.has_encoder) detail::write_mlp(w, s.encoder);
    w.put<std::int64_t>(s.next_encoder_refresh);
    s.buffer.write(w);
    w.put<std::uint64_t>(s.log.episodes.size());
    for (const EpisodeLog& e : s.log.episodes) {
      w.put<std::int64_t>(e.step);
      w.put<std::int32_t>(e.episode);
      w.put<std::uint8_t>(e.success);
      for (double v : {e.mean_reward, e.lambda, e.actor_loss, e.critic_loss})
        w.put<double>(v);
    }
    w.put<std::uint64_t>(s.log.evals.size());
    for (const EvalLog& e : s.log.evals) {
      w.put<std::int64_t>(e.step);
      w.put<double>(e.success_rate);
    }
    if (!w.ok()) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoopState load_checkpoint(const std::filesystem::path& path, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  detail::BinaryReader r(in);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError("not a checkpoint file: " + path.string());
  if (auto v = r.get<std::uint32_t>(); v != kCheckpointFormatVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  if (r.get<std::uint64_t>() != seed)
    throw InvariantError("checkpoint belongs to a different seed");
  LoopState s;
  s.steps = r.get<std::int64_t>();
  s.episode = r.get<std::int32_t>();
  s.next_eval = r.get<std::int64_t>();
  std::istringstream rng(r.get_string());
  rng >> s.rng;
  s.ac.actor = detail::read_mlp(r);
  s.ac.critic = detail::read_mlp(r);
  s.ac.target_critic = detail::read_mlp(r);
  s.ac.actor_opt = read_adam(r);
  s.ac.critic_opt = read_adam(r);
  s.ac.twin = r.get<std::uint8_t>() != 0;
  if (s.ac.twin) {
    s.ac.critic2 = detail::read_mlp(r);
    s.ac.target_critic2 = detail::read_mlp(r);
    s.ac.critic2_opt = read_adam(r);
  }
  s.has_encoder = r.get<std::uint8_t>() != 0;
  if (s.has_encoder) s.encoder = detail::read_mlp(r);
  s.next_encoder_refresh = r.get<std::int64_t>();
  s.buffer = ReplayBuffer::read(r);
  auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    EpisodeLog e;
    e.step = r.get<std::int64_t>();
    e.episode = r.get<std::int32_t>();
    e.success = r.get<std::uint8_t>() != 0;
    e.mean_reward = r.get<double>();
    e.lambda = r.get<double>();
    e.actor_loss = r.get<double>();
    e.critic_loss = r.get<double>();
    s.log.episodes.push_back(e);
  }
  n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    EvalLog e;
    e.step = r.get<std::int64_t>();
    e.success_rate = r.get<double>();
    s.log.evals.push_back(e);
  }
  return s;
}

// Features the OT cost sees: raw, or the encoder's first layer plus a
// constant so no row has zero norm.
Matrix ot_features(const LoopState& s, const Matrix& raw, int frame_stack) {
  if (!s.has_encoder) return raw;
  Matrix h = s.encoder.partial_forward(stack_features(raw, frame_stack), 1);
  Matrix out(h.rows(), h.cols() + 1);
  out << h, Matrix::Ones(h.rows(), 1);
  return out;
}

RewardSeries best_relabel(const LoopState& s, const Matrix& raw, bool success,
                          const TrainInputs& in, const OnlineConfig& c) {
  Matrix expl = ot_features(s, raw, c.frame_stack);
  RewardSeries best;
  double best_total = -std::numeric_limits<double>::infinity();
  for (const RewardTarget& t : in.targets) {
    RewardSeries r = relabel_episode(expl, success,
                                     ot_features(s, t.features, c.frame_stack),
                                     t.nu, c.reward);
    if (r.values.sum() > best_total) {
      best_total = r.values.sum();
      best = std::move(r);
    }
  }
  return best;
}

void check_finite(double v, const char* what, std::int64_t step) {
  if (!std::isfinite(v))
    throw Error(std::string(what) + " became non-finite at step " +
                std::to_string(step));
}

}  // namespace

double evaluate_policy(const TaskSpec& spec, const Mlp& actor, int frame_stack,
                       std::uint64_t seed_base, int episodes) {
  if (episodes < 1) throw InvariantError("evaluation needs episodes");
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    PickPlaceEnv env(spec);
    StepResult r = env.reset(seed_base + static_cast<std::uint64_t>(e));
    FeatureWindow window(frame_stack, r.features);
    while (!env.done()) {
      Vector a = actor.forward(window.current()).row(0).transpose();
      window.push(env.step(a).features);
    }
    wins += env.success();
  }
  return static_cast<double>(wins) / episodes;
}

TrainResult online_train(const TrainInputs& in, const OnlineConfig& c,
                         std::uint64_t seed, bool resume) {
  if (!in.spec || !in.bc_policy) throw InvariantError("training inputs incomplete");
  if (in.targets.empty()) throw InvariantError("no reward targets");
  if (c.update_every < 1 || c.batch_size < 1 || c.eval_every < 1)
    throw InvariantError("invalid training schedule");
  const TaskSpec& spec = *in.spec;

  LoopState s;
  if (resume && !c.checkpoint_path.empty() &&
      std::filesystem::exists(c.checkpoint_path)) {
    s = load_checkpoint(c.checkpoint_path, seed);
  } else {
    s.rng.seed(seed);
    s.ac = make_actor_critic(*in.bc_policy, c.critic_hidden,
                             c.critic_hidden_layers, {.lr = c.critic_lr},
                             {.lr = c.actor_lr}, s.rng, c.twin_critic);
    s.buffer = ReplayBuffer(c.replay_capacity, in.bc_policy->shape().input,
                            TaskSpec::kActionDim);
    if (c.encoder_refresh > 0) {
      s.has_encoder = true;
      s.encoder = s.ac.actor;
      s.next_encoder_refresh = c.encoder_refresh;
    }
  }

  auto eval_due = [&] {
    while (s.steps >= s.next_eval) {
      s.log.evals.push_back({s.next_eval,
                             evaluate_policy(spec, s.ac.actor, c.frame_stack,
                                             c.eval_seed_base, c.eval_episodes)});
      s.next_eval += c.eval_every;
    }
  };
  std::uniform_int_distribution<Eigen::Index> demo_pick(0, in.demo_states.rows() - 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  TrainResult result;
  while (s.steps < c.total_steps) {
    eval_due();
    PickPlaceEnv env(spec);
    StepResult r = env.reset(train_episode_seed(seed, s.episode));
    FeatureWindow window(c.frame_stack, r.features);
    std::vector<Matrix> inputs{window.current()};
    std::vector<Vector> actions;
    double lambda_sum = 0, actor_sum = 0, critic_sum = 0;
    int updates = 0, actor_updates = 0;

    while (!env.done() && s.steps < c.total_steps) {
      Vector a = s.ac.actor.forward(inputs.back()).row(0).transpose();
      for (Eigen::Index k = 0; k < a.size(); ++k) {
        std::normal_distribution<double> noise(0.0, c.noise_std);
        a[k] = std::clamp(a[k] + noise(s.rng), -1.0, 1.0);
      }
      actions.push_back(a);
      window.push(env.step(a).features);
      inputs.push_back(window.current());
      ++s.steps;

      if (s.steps >= c.seed_frames && s.steps % c.update_every == 0 &&
          s.buffer.size() > 0) {
        Batch batch = s.buffer.sample(c.batch_size, c.nstep, c.gamma, s.rng);
        double closs = critic_update(s.ac, batch);
        check_finite(closs, "critic loss", s.steps);
        soft_update(s.ac, c.critic_tau);
        critic_sum += closs;
        ++updates;
        if (s.steps >= c.seed_frames + c.critic_warmup) {
          double lambda = lambda_value(c.lambda, s.steps, batch.states,
                                       *in.bc_policy, s.ac.actor, s.ac.q());
          Matrix ds(c.batch_size, in.demo_states.cols());
          Matrix da(c.batch_size, in.demo_actions.cols());
          for (int i = 0; i < c.batch_size; ++i) {
            Eigen::Index k = demo_pick(s.rng);
            ds.row(i) = in.demo_states.row(k);
            da.row(i) = in.demo_actions.row(k);
          }
          double aloss = actor_update(s.ac, batch.states, ds, da, lambda, c.alpha,
                                      c.normalize_q);
          check_finite(aloss, "actor loss", s.steps);
          lambda_sum += lambda;
          actor_sum += aloss;
          ++actor_updates;
        }
      }
      if (s.steps % c.eval_every == 0) eval_due();
    }

    EpisodeRecord rec;
    rec.states.resize(static_cast<Eigen::Index>(inputs.size()), inputs[0].cols());
    for (std::size_t t = 0; t < inputs.size(); ++t) rec.states.row(t) = inputs[t];
    rec.actions.resize(static_cast<Eigen::Index>(actions.size()), TaskSpec::kActionDim);
    for (std::size_t t = 0; t < actions.size(); ++t) rec.actions.row(t) = actions[t].transpose();
    RewardSeries rewards = best_relabel(s, window.all(), env.success(), in, c);
    rec.rewards = rewards.values.tail(rewards.values.size() - 1);
    rec.terminal = env.success();
    s.buffer.add_episode(rec);

    s.log.episodes.push_back(
        {s.steps, s.episode, env.success(), rewards.values.mean(),
         actor_updates ? lambda_sum / actor_updates : nan,
         actor_updates ? actor_sum / actor_updates : nan,
         updates ? critic_sum / updates : nan});
    ++s.episode;

    if (s.has_encoder && s.steps >= s.next_encoder_refresh) {
      s.encoder = s.ac.actor;
      while (s.next_encoder_refresh <= s.steps) s.next_encoder_refresh += c.encoder_refresh;
    }
    if (c.checkpoint_every > 0 && !c.checkpoint_path.empty() &&
        s.episode % c.checkpoint_every == 0)
      save_checkpoint(c.checkpoint_path, s, seed);
    if (c.stop_after_episodes > 0 && s.episode >= c.stop_after_episodes &&
        s.steps < c.total_steps) {
      result.agent = std::move(s.ac);
      result.log = std::move(s.log);
      result.steps = s.steps;
      return result;
    }
  }
  eval_due();
  result.agent = std::move(s.ac);
  result.log = std::move(s.log);
  result.steps = s.steps;
  result.finished = true;
  return result;
}

}  // namespace koi
