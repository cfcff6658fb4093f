// Acceptance checks, one PASS/FAIL line per criterion. The directional
// training experiment (9) is reported with per-seed evidence and does not
// affect the exit status; every other criterion does.
//
// usage: acceptance_test [run_dir] [--skip-training]
//        run_dir defaults to ./acceptance_runs; finished runs there are reused.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <string>

#include "grad_check.h"
#include "key_layouts.h"
#include "koi/harness.h"
#include "koi/importance.h"
#include "koi/learner.h"
#include "koi/motion.h"
#include "koi/ot.h"
#include "koi/semantic.h"
#include "koi/sim_env.h"
#include "synthetic_frames.h"
#include "test_util.h"

namespace fs = std::filesystem;
using namespace koi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, bool gating,
            const std::function<Outcome()>& check) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name,
              o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass && gating) ++failures;
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Vector random_distribution(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Vector p(n);
  for (int i = 0; i < n; ++i) p[i] = u(rng);
  return p / p.sum();
}

Outcome sinkhorn_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  SinkhornOptions opt{.epsilon = 0.01, .max_iters = 200000, .tol = 1e-9};
  int ok = 0;
  double worst_rel = 0.0, worst_violation = 0.0;
  auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 50; ++trial) {
    int n = size(rng), m = size(rng);
    Matrix c(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) c(i, j) = u(rng);
    Vector mu = random_distribution(rng, n), nu = random_distribution(rng, m);
    double exact = transport_cost(exact_ot_oracle({c}, mu, nu), {c});
    TransportPlan p = sinkhorn({c}, mu, nu, opt);
    double approx = transport_cost(p, {c});
    double rel = std::abs(approx - exact) / std::max(exact, 1e-12);
    bool within = std::abs(approx - exact) <= 0.02 * exact + 1e-12;
    worst_rel = std::max(worst_rel, rel);
    worst_violation = std::max(worst_violation, p.marginal_violation);
    ok += within && p.marginal_violation < 1e-6;
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok == 50 && secs < 10.0,
          format("%d/50 within 2%% of exact (worst %.3g%%), max marginal violation %.2g",
                 ok, 100 * worst_rel, worst_violation)};
}

Outcome reward_identity() {
  std::mt19937_64 rng(102);
  bool ok = true;
  double lo = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix f = test::random_matrix(rng, 40, 6);
    CostMatrix c = cosine_cost_matrix(f, f);
    Vector mu = Vector::Constant(40, 1.0 / 40);
    TransportPlan p = sinkhorn(c, mu, mu, {});
    for (double scale : {1.0, 10.0}) {
      RewardSeries r = per_state_rewards(p, c, scale);
      RewardSeries r2 = per_state_rewards(p, c, 2 * scale);
      lo = std::min(lo, r.values.minCoeff() / scale);
      ok = ok && r.values.maxCoeff() <= 0.0 && r.values.minCoeff() >= -0.01 * scale &&
           r2.values == 2.0 * r.values;
    }
  }
  return {ok, format("rewards within [%.2g*scale, 0]; doubling scale doubles exactly", lo)};
}

Outcome flow_shift() {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> d(-3, 3);
  int ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Frame a = test::textured_frame(rng, 64, 64);
    int sx = d(rng), sy = d(rng);
    FlowField f = farneback_flow(a, test::shifted(a, sx, sy));
    const int m = 8, n = 64 - 2 * m;
    Eigen::Vector2d mean(f.u.block(m, m, n, n).mean(), f.v.block(m, m, n, n).mean());
    double err = (mean - Eigen::Vector2d(sx, sy)).norm();
    worst = std::max(worst, err);
    ok += err < 0.5;
  }
  return {ok == 20, format("%d/20 shifts recovered, worst endpoint error %.3f px", ok, worst)};
}

Outcome motion_exact() {
  std::mt19937_64 rng(104);
  std::uniform_int_distribution<int> intervals(1, 4);
  int ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    test::PiecewiseStatic seq = test::piecewise_static_sequence(rng, intervals(rng));
    MotionIndexSet m = motion_keystates(seq.frames, seq.semantic);
    ok += m.indices == seq.moving;
  }
  return {ok == 20, format("%d/20 sequences matched the constructed index", ok)};
}

Outcome importance_property() {
  std::mt19937_64 rng(105);
  KeyWeightParams params;
  int ok = 0;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    test::KeyLayout layout =
        test::random_key_layout(rng, static_cast<int>(3 * params.sigma_semantic));
    ImportanceDistribution d =
        build_importance(layout.semantic, layout.motion, params, layout.demo_len);
    Eigen::Index arg;
    d.nu.maxCoeff(&arg);
    worst_sum = std::max(worst_sum, std::abs(d.nu.sum() - 1.0));
    ok += std::abs(d.nu.sum() - 1.0) < 1e-9 && arg == layout.semantic.indices.back();
  }
  return {ok == 100, format("%d/100 layouts: sum-1 within %.1g, argmax at final key",
                            ok, worst_sum)};
}

Outcome gradient_checks() {
  std::mt19937_64 rng(106);
  double worst = 0.0;
  int ok = 0;
  for (int trial = 0; trial < 20; ++trial) {
    test::GradCase c = test::random_grad_case(
        rng, trial % 2 ? Activation::kTanh : Activation::kRelu);
    test::GradErrors e = test::check_gradients(c);
    double m = std::max({e.bc, e.actor, e.critic});
    worst = std::max(worst, m);
    ok += m < 1e-4;
  }
  return {ok == 20, format("%d/20 configurations, worst relative error %.2g", ok, worst)};
}

Mlp linear(const Matrix& w, const Vector& b) {
  std::mt19937_64 rng(0);
  Mlp m(MlpShape{static_cast<int>(w.rows()), 1, static_cast<int>(w.cols()), 0,
                 Activation::kRelu, false},
        rng);
  m.params() << Eigen::Map<const Vector>(w.data(), w.size()), b;
  return m;
}

Outcome lambda_exact() {
  // Q(s, a) = a; pi_b(s) = s, pi_e(s) = -s: BC wins exactly where s > 0.
  Mlp critic = linear((Matrix(2, 1) << 0.0, 1.0).finished(), Vector::Zero(1));
  Mlp bc = linear((Matrix(1, 1) << 1.0).finished(), Vector::Zero(1));
  Mlp pe = linear((Matrix(1, 1) << -1.0).finished(), Vector::Zero(1));
  Matrix s(4, 1);
  s << 1.0, 2.0, -1.0, 3.0;
  double three_of_four = adaptive_lambda(s, bc, pe, critic);
  std::mt19937_64 rng(107);
  std::uniform_int_distribution<int> n(1, 64);
  bool all = three_of_four == 0.75;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix st = test::random_matrix(rng, n(rng), 1);
    double expect = static_cast<double>((st.array() > 0.0).count()) / st.rows();
    all = all && adaptive_lambda(st, bc, pe, critic) == expect;
  }
  return {all, format("3-of-4 -> %.2f; 50 random batches equal the indicator fraction",
                      three_of_four)};
}

// Rolls the expert until `stop_events` subgoals are done, then holds still
// until `length` states; stop_events = 0 idles from the start.
Trajectory constructed_episode(const TaskSpec& spec, std::uint64_t seed,
                               int stop_events, int length) {
  PickPlaceEnv env(spec);
  StepResult r = env.reset(seed);
  std::vector<State> states;
  State first;
  first.features = r.features;
  states.push_back(first);
  int done = 0;
  Vector idle = Vector::Zero(TaskSpec::kActionDim);
  while (static_cast<int>(states.size()) < length && !env.done()) {
    Vector a = done < stop_events ? scripted_expert(spec, env.state()) : idle;
    StepResult s = env.step(a);
    done += static_cast<int>(s.events.size());
    State st;
    st.features = s.features;
    states.push_back(st);
  }
  TrajectoryMeta meta;
  meta.task = spec.name;
  meta.seed = seed;
  meta.success = env.success();
  return Trajectory(std::move(states), meta);
}

double final_third_mean(const RewardSeries& r) {
  Eigen::Index n = r.values.size(), start = n - n / 3;
  return r.values.tail(n - start).mean();
}

Outcome reward_ordering() {
  TaskSpec spec = TaskSpec::pick_place(2);
  ExperimentConfig config;
  RewardConfig rc = config.online.reward;
  rc.bonus = 0.0;
  int ordered = 0, below_uniform = 0;
  std::string evidence;
  for (int k = 0; k < 5; ++k) {
    std::uint64_t demo_seed = 500 + k, seed = 700 + k;
    Trajectory demo = record_expert_demo(spec, demo_seed, true);
    ScriptedAnnotator a(spec.schema, demo);
    KeyStateSet keys = extract_keystates(demo, spec, RewardMode::kKoi, a, config);
    ImportanceDistribution koi_nu =
        importance_for(RewardMode::kKoi, keys, config.key_weights, demo.size());
    ImportanceDistribution uni = uniform_importance(demo.size());

    Trajectory full = constructed_episode(spec, seed, 4, 1 << 20);
    int len = full.size();
    Trajectory half = constructed_episode(spec, seed, 2, len);
    Trajectory none = constructed_episode(spec, seed, 0, len);
    double f = final_third_mean(relabel_episode(full, demo, koi_nu, rc));
    double h = final_third_mean(relabel_episode(half, demo, koi_nu, rc));
    double z = final_third_mean(relabel_episode(none, demo, koi_nu, rc));
    double hu = final_third_mean(relabel_episode(half, demo, uni, rc));
    ordered += full.meta().success && f > h && h > z;
    below_uniform += h < hu;
    evidence += format(" [%.4f > %.4f > %.4f; half koi %.4f < uniform %.4f]", f, h, z, h, hu);
  }
  return {ordered == 5 && below_uniform == 5,
          format("order %d/5, half below uniform %d/5;", ordered, below_uniform) + evidence};
}

Outcome directional(const fs::path& out) {
  ExperimentConfig c;
  c.modes = {RewardMode::kKoi, RewardMode::kUniform, RewardMode::kSdmOnly,
             RewardMode::kMcmOnly};
  c.out = out;
  std::vector<RunSummary> runs = run_experiment(c);
  std::map<RewardMode, double> final_mean;
  double bc_mean = 0.0;
  int bc_n = 0;
  std::string evidence;
  for (RewardMode m : c.modes) {
    double sum = 0.0;
    int n = 0;
    evidence += " " + mode_name(m) + "=[";
    for (const RunSummary& r : runs)
      if (r.mode == m) {
        sum += r.final_success;
        evidence += format("%s%.2f", n ? " " : "", r.final_success);
        ++n;
        bc_mean += r.bc_success;
        ++bc_n;
      }
    final_mean[m] = sum / n;
    evidence += format("] mean %.3f;", final_mean[m]);
  }
  bc_mean /= bc_n;
  double koi = final_mean[RewardMode::kKoi], uni = final_mean[RewardMode::kUniform];
  bool a = koi >= uni;
  bool b = koi >= bc_mean - 0.05 && uni >= bc_mean - 0.05;
  bool d = koi >= final_mean[RewardMode::kSdmOnly] - 0.05 &&
           koi >= final_mean[RewardMode::kMcmOnly] - 0.05;
  return {a && b && d,
          format("koi>=uniform %s, both>=BC(%.3f)-0.05 %s, koi>=ablations-0.05 %s;",
                 a ? "yes" : "no", bc_mean, b ? "yes" : "no", d ? "yes" : "no") +
              evidence + " (reported, not gating)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  test::TempDir a, b;
  ExperimentConfig c;
  c.seeds = {5};
  c.modes = {RewardMode::kKoi};
  c.online.total_steps = 4000;
  c.online.eval_every = 1000;
  c.online.eval_episodes = 3;
  c.out = a.path();
  run_experiment(c);
  c.out = b.path();
  run_experiment(c);
  std::string x = slurp(run_dir(c, RewardMode::kKoi, 5) / "metrics.csv");
  c.out = a.path();
  std::string y = slurp(run_dir(c, RewardMode::kKoi, 5) / "metrics.csv");
  bool same = !x.empty() && x == y;
  return {same, format("metrics.csv %s across two runs (%zu bytes)",
                       same ? "byte-identical" : "DIFFERS", x.size())};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = "acceptance_runs";
  bool skip_training = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--skip-training")
      skip_training = true;
    else
      out = argv[i];
  }
  report(1, "sinkhorn-oracle equivalence", true, sinkhorn_oracle);
  report(2, "reward identity and linearity", true, reward_identity);
  report(3, "flow shift recovery", true, flow_shift);
  report(4, "motion key-state exactness", true, motion_exact);
  report(5, "importance distribution", true, importance_property);
  report(6, "gradient checks", true, gradient_checks);
  report(7, "adaptive lambda exactness", true, lambda_exact);
  report(8, "reward ordering full > half > none", true, reward_ordering);
  if (skip_training)
    std::printf("SKIP  9 directional success comparison: --skip-training\n");
  else
    report(9, "directional success comparison", false, [&] { return directional(out); });
  report(10, "metrics determinism", true, determinism);
  return failures == 0 ? 0 : 1;
}
