#include "koi/harness.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "koi/motion.h"
#include "koi/vlm.h"

namespace koi {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<RewardMode>& all_reward_modes() {
  static const std::vector<RewardMode> modes{
      RewardMode::kKoi,     RewardMode::kUniform,       RewardMode::kSdmOnly,
      RewardMode::kMcmOnly, RewardMode::kFixedInterval, RewardMode::kUniformMotion};
  return modes;
}

std::string mode_name(RewardMode mode) {
  switch (mode) {
    case RewardMode::kKoi: return "koi";
    case RewardMode::kUniform: return "uniform";
    case RewardMode::kSdmOnly: return "sdm_only";
    case RewardMode::kMcmOnly: return "mcm_only";
    case RewardMode::kFixedInterval: return "fixed_interval";
    case RewardMode::kUniformMotion: return "uniform_motion";
  }
  throw InvariantError("unknown reward mode");
}

RewardMode parse_mode(const std::string& name) {
  for (RewardMode m : all_reward_modes())
    if (mode_name(m) == name) return m;
  throw InvariantError("unknown reward mode '" + name + "'");
}

namespace {

const std::map<std::string, LambdaMode> kLambdaModes{
    {"adaptive", LambdaMode::kAdaptive},
    {"linear", LambdaMode::kLinearDecay},
    {"fixed", LambdaMode::kFixed},
    {"adaptive_decay", LambdaMode::kAdaptiveDecay}};
const std::map<std::string, Activation> kActivations{
    {"relu", Activation::kRelu}, {"tanh", Activation::kTanh}};
const std::map<std::string, BcOptimizer> kOptimizers{
    {"adam", BcOptimizer::kAdam}, {"sgd", BcOptimizer::kGradientDescent}};

template <typename E>
std::string enum_name(const std::map<std::string, E>& table, E v) {
  for (const auto& [k, x] : table)
    if (x == v) return k;
  throw InvariantError("unnamed enum value");
}

template <typename E>
E enum_value(const std::map<std::string, E>& table, const std::string& name,
             const char* what) {
  auto it = table.find(name);
  if (it == table.end())
    throw FormatError(std::string("unknown ") + what + " '" + name + "'");
  return it->second;
}

// Reads known keys from one object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw FormatError(where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& value) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      value = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw FormatError(where_ + "." + key + ": " + e.what());
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw FormatError("unknown key " + where_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

fs::path keys_path(const ExperimentConfig& c, RewardMode mode,
                   std::uint64_t demo_seed) {
  return c.out / "keys" / c.task / mode_name(mode) /
         (std::to_string(demo_seed) + ".json");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  bc.hidden = 64;
  bc.activation = Activation::kTanh;
  bc.steps = 5000;
  bc.batch_size = 128;
  bc.lr = 1e-3;

  online.total_steps = 60000;
  online.seed_frames = 2000;
  online.batch_size = 128;
  online.critic_hidden = 64;
  online.alpha = 1.0;
  online.normalize_q = true;
  online.twin_critic = true;
  online.lambda.mode = LambdaMode::kFixed;
  online.reward.bonus = 5.0;
  online.reward.sinkhorn.epsilon = 0.1;
  online.checkpoint_every = 25;
}

void ExperimentConfig::validate() const {
  TaskSpec::by_name(task);
  if (seeds.empty()) throw InvariantError("config needs at least one seed");
  if (modes.empty()) throw InvariantError("config needs at least one mode");
  if (demos < 1) throw InvariantError("config needs at least one demo");
  if (annotator != "scripted" && annotator != "vlm")
    throw InvariantError("annotator must be 'scripted' or 'vlm'");
  if (query_stride < 1 || grid_interval < 1 || motion_interval < 1)
    throw InvariantError("key intervals must be positive");
  if (workers < 1) throw InvariantError("workers must be positive");
  if (online.total_steps < 0) throw InvariantError("negative step budget");
  key_weights.validate();
}

json ExperimentConfig::to_json() const {
  json j;
  j["task"] = task;
  j["seeds"] = seeds;
  std::vector<std::string> names;
  for (RewardMode m : modes) names.push_back(mode_name(m));
  j["modes"] = names;
  j["demos"] = demos;
  j["demo_seed_base"] = demo_seed_base;
  j["annotator"] = annotator;
  j["query_stride"] = query_stride;
  j["grid_interval"] = grid_interval;
  j["motion_interval"] = motion_interval;
  j["key_weights"] = {{"a_semantic", key_weights.a_semantic},
                      {"a_semantic_last", key_weights.a_semantic_last},
                      {"a_motion", key_weights.a_motion},
                      {"sigma_semantic", key_weights.sigma_semantic},
                      {"sigma_motion", key_weights.sigma_motion}};
  j["bc"] = {{"hidden", bc.hidden},
             {"hidden_layers", bc.hidden_layers},
             {"activation", enum_name(kActivations, bc.activation)},
             {"steps", bc.steps},
             {"batch_size", bc.batch_size},
             {"lr", bc.lr},
             {"optimizer", enum_name(kOptimizers, bc.optimizer)},
             {"frame_stack", bc.frame_stack}};
  const OnlineConfig& o = online;
  j["online"] = {
      {"total_steps", o.total_steps},
      {"seed_frames", o.seed_frames},
      {"update_every", o.update_every},
      {"critic_warmup", o.critic_warmup},
      {"batch_size", o.batch_size},
      {"nstep", o.nstep},
      {"gamma", o.gamma},
      {"critic_tau", o.critic_tau},
      {"actor_lr", o.actor_lr},
      {"critic_lr", o.critic_lr},
      {"alpha", o.alpha},
      {"noise_std", o.noise_std},
      {"lambda",
       {{"mode", enum_name(kLambdaModes, o.lambda.mode)},
        {"start", o.lambda.start},
        {"end", o.lambda.end},
        {"steps", o.lambda.steps},
        {"constant", o.lambda.constant}}},
      {"ot",
       {{"epsilon", o.reward.sinkhorn.epsilon},
        {"max_iters", o.reward.sinkhorn.max_iters},
        {"tol", o.reward.sinkhorn.tol},
        {"scale", o.reward.scale},
        {"bonus", o.reward.bonus}}},
      {"replay_capacity", o.replay_capacity},
      {"critic_hidden", o.critic_hidden},
      {"critic_hidden_layers", o.critic_hidden_layers},
      {"twin_critic", o.twin_critic},
      {"normalize_q", o.normalize_q},
      {"eval_every", o.eval_every},
      {"eval_episodes", o.eval_episodes},
      {"eval_seed_base", o.eval_seed_base},
      {"encoder_refresh", o.encoder_refresh},
      {"checkpoint_every", o.checkpoint_every}};
  j["out"] = out.string();
  j["workers"] = workers;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "config");
  r.get("task", c.task);
  r.get("seeds", c.seeds);
  if (const json* m = r.sub("modes")) {
    c.modes.clear();
    try {
      for (const std::string& name : m->get<std::vector<std::string>>())
        c.modes.push_back(parse_mode(name));
    } catch (const InvariantError& e) {
      throw FormatError(e.what());
    } catch (const json::exception& e) {
      throw FormatError(std::string("config.modes: ") + e.what());
    }
  }
  r.get("demos", c.demos);
  r.get("demo_seed_base", c.demo_seed_base);
  r.get("annotator", c.annotator);
  r.get("query_stride", c.query_stride);
  r.get("grid_interval", c.grid_interval);
  r.get("motion_interval", c.motion_interval);
  if (const json* k = r.sub("key_weights")) {
    ObjectReader kr(*k, "key_weights");
    kr.get("a_semantic", c.key_weights.a_semantic);
    kr.get("a_semantic_last", c.key_weights.a_semantic_last);
    kr.get("a_motion", c.key_weights.a_motion);
    kr.get("sigma_semantic", c.key_weights.sigma_semantic);
    kr.get("sigma_motion", c.key_weights.sigma_motion);
    kr.finish();
  }
  if (const json* b = r.sub("bc")) {
    ObjectReader br(*b, "bc");
    br.get("hidden", c.bc.hidden);
    br.get("hidden_layers", c.bc.hidden_layers);
    std::string act = enum_name(kActivations, c.bc.activation);
    br.get("activation", act);
    c.bc.activation = enum_value(kActivations, act, "activation");
    br.get("steps", c.bc.steps);
    br.get("batch_size", c.bc.batch_size);
    br.get("lr", c.bc.lr);
    std::string opt = enum_name(kOptimizers, c.bc.optimizer);
    br.get("optimizer", opt);
    c.bc.optimizer = enum_value(kOptimizers, opt, "optimizer");
    br.get("frame_stack", c.bc.frame_stack);
    br.finish();
  }
  if (const json* on = r.sub("online")) {
    OnlineConfig& o = c.online;
    ObjectReader orr(*on, "online");
    orr.get("total_steps", o.total_steps);
    orr.get("seed_frames", o.seed_frames);
    orr.get("update_every", o.update_every);
    orr.get("critic_warmup", o.critic_warmup);
    orr.get("batch_size", o.batch_size);
    orr.get("nstep", o.nstep);
    orr.get("gamma", o.gamma);
    orr.get("critic_tau", o.critic_tau);
    orr.get("actor_lr", o.actor_lr);
    orr.get("critic_lr", o.critic_lr);
    orr.get("alpha", o.alpha);
    orr.get("noise_std", o.noise_std);
    if (const json* l = orr.sub("lambda")) {
      ObjectReader lr(*l, "online.lambda");
      std::string mode = enum_name(kLambdaModes, o.lambda.mode);
      lr.get("mode", mode);
      o.lambda.mode = enum_value(kLambdaModes, mode, "lambda mode");
      lr.get("start", o.lambda.start);
      lr.get("end", o.lambda.end);
      lr.get("steps", o.lambda.steps);
      lr.get("constant", o.lambda.constant);
      lr.finish();
    }
    if (const json* t = orr.sub("ot")) {
      ObjectReader tr(*t, "online.ot");
      tr.get("epsilon", o.reward.sinkhorn.epsilon);
      tr.get("max_iters", o.reward.sinkhorn.max_iters);
      tr.get("tol", o.reward.sinkhorn.tol);
      tr.get("scale", o.reward.scale);
      tr.get("bonus", o.reward.bonus);
      tr.finish();
    }
    orr.get("replay_capacity", o.replay_capacity);
    orr.get("critic_hidden", o.critic_hidden);
    orr.get("critic_hidden_layers", o.critic_hidden_layers);
    orr.get("twin_critic", o.twin_critic);
    orr.get("normalize_q", o.normalize_q);
    orr.get("eval_every", o.eval_every);
    orr.get("eval_episodes", o.eval_episodes);
    orr.get("eval_seed_base", o.eval_seed_base);
    orr.get("encoder_refresh", o.encoder_refresh);
    orr.get("checkpoint_every", o.checkpoint_every);
    orr.finish();
  }
  std::string out = c.out.string();
  r.get("out", out);
  c.out = out;
  r.get("workers", c.workers);
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

SemanticIndexSet interval_keys(int demo_len, int interval) {
  if (demo_len < 2 || interval < 1) throw InvariantError("invalid key grid");
  SemanticIndexSet s;
  for (int j = interval; j < demo_len - 1; j += interval) s.indices.push_back(j);
  s.indices.push_back(demo_len - 1);
  return s;
}

MotionIndexSet uniform_motion_keys(const SemanticIndexSet& semantic,
                                   int interval) {
  if (interval < 1) throw InvariantError("invalid motion interval");
  MotionIndexSet m;
  for (auto [lo, hi] : semantic_intervals(semantic))
    for (int j = (lo / interval + 1) * interval; j < hi; j += interval)
      m.indices.push_back(j);
  return m;
}

KeyStateSet extract_keystates(const Trajectory& demo, const TaskSpec& spec,
                              RewardMode mode, Annotator& annotator,
                              const ExperimentConfig& config) {
  KeyStateSet keys;
  if (mode == RewardMode::kUniform) return keys;
  const bool grid = mode == RewardMode::kMcmOnly || mode == RewardMode::kFixedInterval;
  if (grid) {
    keys.semantic = interval_keys(demo.size(), config.grid_interval);
  } else {
    QuerySet query = sample_observations(demo, config.query_stride);
    SubgoalList subgoals = decompose_task(spec.description, annotator);
    keys.semantic = annotate_semantic(query, subgoals, annotator);
  }
  switch (mode) {
    case RewardMode::kKoi:
    case RewardMode::kMcmOnly: {
      if (!demo.has_frames()) throw InvariantError("demo has no frames");
      std::vector<Frame> frames = demo.frames();
      keys.motion = motion_keystates(frames, keys.semantic);
      break;
    }
    case RewardMode::kUniformMotion:
      keys.motion = uniform_motion_keys(keys.semantic, config.motion_interval);
      break;
    default:
      break;
  }
  return keys;
}

ImportanceDistribution importance_for(RewardMode mode, const KeyStateSet& keys,
                                      const KeyWeightParams& params,
                                      int demo_len) {
  if (mode == RewardMode::kUniform) return uniform_importance(demo_len);
  return build_importance(keys.semantic, keys.motion, params, demo_len);
}

void save_keystates(const KeyStateSet& keys, RewardMode mode, int demo_len,
                    const fs::path& path) {
  json j{{"mode", mode_name(mode)},
         {"demo_len", demo_len},
         {"semantic", keys.semantic.indices},
         {"motion", keys.motion.indices}};
  write_text_atomic(path, j.dump(1) + "\n");
}

KeyStateSet load_keystates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    json j = json::parse(in);
    KeyStateSet k;
    k.semantic.indices = j.at("semantic").get<std::vector<int>>();
    k.motion.indices = j.at("motion").get<std::vector<int>>();
    return k;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

fs::path run_dir(const ExperimentConfig& config, RewardMode mode,
                 std::uint64_t seed) {
  return config.out / "runs" / config.task / mode_name(mode) /
         ("seed" + std::to_string(seed));
}

double final_success(const TrainLog& log, std::int64_t total_steps) {
  const double from = 0.9 * static_cast<double>(total_steps);
  double sum = 0.0;
  int n = 0;
  for (const EvalLog& e : log.evals)
    if (static_cast<double>(e.step) >= from) {
      sum += e.success_rate;
      ++n;
    }
  if (n == 0) {
    if (log.evals.empty()) throw InvariantError("run has no evaluations");
    return log.evals.back().success_rate;
  }
  return sum / n;
}

std::vector<Trajectory> load_or_generate_demos(const ExperimentConfig& config) {
  TaskSpec spec = TaskSpec::by_name(config.task);
  std::vector<Trajectory> demos;
  for (int i = 0; i < config.demos; ++i) {
    std::uint64_t seed = config.demo_seed_base + static_cast<std::uint64_t>(i);
    fs::path path = demo_path(config.out / "demos", config.task, seed);
    if (fs::exists(path)) {
      demos.push_back(load_trajectory(path));
      continue;
    }
    Trajectory demo = record_expert_demo(spec, seed, true);
    if (!demo.meta().success)
      throw Error("expert failed on demo seed " + std::to_string(seed));
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    save_trajectory(demo, tmp);
    fs::rename(tmp, path);
    demos.push_back(std::move(demo));
  }
  return demos;
}

Mlp pretrain_bc(const std::vector<Trajectory>& demos,
                const ExperimentConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return train_bc(demos, config.bc, rng);
}

std::unique_ptr<Annotator> make_annotator(const ExperimentConfig& config,
                                          const TaskSpec& spec,
                                          const Trajectory& demo) {
  if (config.annotator == "vlm")
    return std::make_unique<VlmAnnotator>(VlmConfig::from_env());
  return std::make_unique<ScriptedAnnotator>(spec.schema, demo);
}

namespace {

// Key states for every demo, cached under out/keys.
std::vector<KeyStateSet> prepare_keys(const ExperimentConfig& config,
                                      RewardMode mode,
                                      const std::vector<Trajectory>& demos) {
  TaskSpec spec = TaskSpec::by_name(config.task);
  std::vector<KeyStateSet> out;
  std::unique_ptr<Annotator> shared;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    std::uint64_t demo_seed = config.demo_seed_base + i;
    fs::path path = keys_path(config, mode, demo_seed);
    if (fs::exists(path)) {
      out.push_back(load_keystates(path));
      continue;
    }
    std::unique_ptr<Annotator> local;
    Annotator* annotator;
    if (config.annotator == "vlm") {
      if (!shared) shared = make_annotator(config, spec, demos[i]);
      annotator = shared.get();
    } else {
      local = make_annotator(config, spec, demos[i]);
      annotator = local.get();
    }
    KeyStateSet keys = extract_keystates(demos[i], spec, mode, *annotator, config);
    save_keystates(keys, mode, demos[i].size(), path);
    out.push_back(std::move(keys));
  }
  return out;
}

}  // namespace

RunSummary run_one(const ExperimentConfig& config, RewardMode mode,
                   std::uint64_t seed) {
  config.validate();
  TaskSpec spec = TaskSpec::by_name(config.task);
  std::vector<Trajectory> demos = load_or_generate_demos(config);
  std::vector<KeyStateSet> keys = prepare_keys(config, mode, demos);

  TrainInputs in;
  in.spec = &spec;
  for (std::size_t i = 0; i < demos.size(); ++i)
    in.targets.push_back(
        {demos[i].feature_matrix(),
         importance_for(mode, keys[i], config.key_weights, demos[i].size())});
  Mlp bc = pretrain_bc(demos, config, seed);
  in.bc_policy = &bc;
  demo_pairs(demos, config.bc.frame_stack, in.demo_states, in.demo_actions);

  fs::path dir = run_dir(config, mode, seed);
  fs::create_directories(dir);
  OnlineConfig online = config.online;
  online.frame_stack = config.bc.frame_stack;
  online.checkpoint_path = dir / "checkpoint.bin";
  TrainResult result = online_train(in, online, seed, true);

  write_metrics_csv(result.log, dir / "metrics.csv");
  write_eval_csv(result.log, dir / "eval.csv");

  RunSummary s;
  s.mode = mode;
  s.seed = seed;
  s.finished = result.finished;
  s.bc_success = result.log.evals.empty() ? std::nan("")
                                          : result.log.evals.front().success_rate;
  s.final_success = final_success(result.log, online.total_steps);
  s.log = std::move(result.log);
  return s;
}

void write_metrics_csv(const TrainLog& log, const fs::path& path) {
  std::string text = "step,episode,success,mean_reward,lambda,actor_loss,critic_loss\n";
  for (const EpisodeLog& e : log.episodes)
    text += std::to_string(e.step) + "," + std::to_string(e.episode) + "," +
            (e.success ? "1" : "0") + "," + fmt(e.mean_reward) + "," +
            fmt(e.lambda) + "," + fmt(e.actor_loss) + "," + fmt(e.critic_loss) +
            "\n";
  write_text_atomic(path, text);
}

void write_eval_csv(const TrainLog& log, const fs::path& path) {
  std::string text = "step,success_rate\n";
  for (const EvalLog& e : log.evals)
    text += std::to_string(e.step) + "," + fmt(e.success_rate) + "\n";
  write_text_atomic(path, text);
}

TrainLog read_eval_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,success_rate")
    throw FormatError(path.string() + ": unexpected header");
  TrainLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != 2) throw FormatError(path.string() + ": bad row '" + line + "'");
    try {
      log.evals.push_back({std::stoll(cells[0]), std::stod(cells[1])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad row '" + line + "'");
    }
  }
  return log;
}

Curve aggregate(const std::string& label, const std::vector<TrainLog>& runs) {
  if (runs.empty()) throw InvariantError("nothing to aggregate");
  Curve c;
  c.label = label;
  for (const EvalLog& e : runs.front().evals) {
    std::vector<double> v;
    for (const TrainLog& r : runs) {
      auto it = std::find_if(r.evals.begin(), r.evals.end(),
                             [&](const EvalLog& x) { return x.step == e.step; });
      if (it == r.evals.end()) break;
      v.push_back(it->success_rate);
    }
    if (v.size() != runs.size()) continue;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    c.points.push_back({e.step, mean, std::sqrt(var)});
  }
  return c;
}

void write_curve_csv(const Curve& curve, const fs::path& path) {
  std::string text = "step,mean,std\n";
  for (const CurvePoint& p : curve.points)
    text += std::to_string(p.step) + "," + fmt(p.mean) + "," + fmt(p.stddev) + "\n";
  write_text_atomic(path, text);
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_svg(const std::vector<Curve>& curves) {
  if (curves.empty()) throw InvariantError("no curves to plot");
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  const double W = 720, left = 60, right = 160, top = 30, gap = 60;
  const double h1 = 260, h2 = 140, pw = W - left - right;
  const double H = top + h1 + gap + h2 + 40;

  std::int64_t max_step = 1;
  double max_std = 0.05;
  for (const Curve& c : curves)
    for (const CurvePoint& p : c.points) {
      max_step = std::max(max_step, p.step);
      max_std = std::max(max_std, p.stddev);
    }
  auto x = [&](std::int64_t s) { return left + pw * static_cast<double>(s) / max_step; };
  auto y1 = [&](double v) { return top + h1 * (1.0 - std::clamp(v, 0.0, 1.0)); };
  const double top2 = top + h1 + gap;
  auto y2 = [&](double v) { return top2 + h2 * (1.0 - v / max_std); };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W
    << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  // Axes.
  for (auto [y0, h, label] : {std::tuple{top, h1, "success rate"},
                              std::tuple{top2, h2, "std across seeds"}}) {
    o << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << pw
      << "\" height=\"" << h << "\" fill=\"none\" stroke=\"#444\"/>\n"
      << "<text x=\"" << left << "\" y=\"" << y0 - 6 << "\">" << label << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    double v = t / 4.0;
    o << "<text x=\"" << left - 6 << "\" y=\"" << num(y1(v) + 4)
      << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << num(y2(v * max_std) + 4)
      << "\" text-anchor=\"end\">" << num(v * max_std) << "</text>\n";
    std::int64_t s = max_step * t / 4;
    o << "<text x=\"" << num(x(s)) << "\" y=\"" << num(top2 + h2 + 16)
      << "\" text-anchor=\"middle\">" << s << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << num(H - 6)
    << "\" text-anchor=\"middle\">environment steps</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const Curve& c = curves[i];
    const char* color = kColors[i % std::size(kColors)];
    if (c.points.empty()) continue;
    std::string band, mean, spread;
    for (const CurvePoint& p : c.points)
      band += num(x(p.step)) + "," + num(y1(p.mean + p.stddev)) + " ";
    for (auto it = c.points.rbegin(); it != c.points.rend(); ++it)
      band += num(x(it->step)) + "," + num(y1(it->mean - it->stddev)) + " ";
    for (const CurvePoint& p : c.points) {
      mean += num(x(p.step)) + "," + num(y1(p.mean)) + " ";
      spread += num(x(p.step)) + "," + num(y2(p.stddev)) + " ";
    }
    band.pop_back();
    mean.pop_back();
    spread.pop_back();
    o << "<polygon points=\"" << band << "\" fill=\"" << color
      << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n"
      << "<polyline points=\"" << mean << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\"/>\n"
      << "<polyline points=\"" << spread << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\"/>\n";
    double ly = top + 14 + 18 * static_cast<double>(i);
    o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\""
      << left + pw + 32 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">"
      << xml_escape(c.label) << "</text>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

void run_parallel(std::size_t jobs, int workers,
                  const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs) return;
      {
        std::lock_guard lock(mu);
        if (first) return;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  std::size_t n = std::min<std::size_t>(jobs, static_cast<std::size_t>(std::max(1, workers)));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

std::vector<RunSummary> run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.out);
  write_text_atomic(config.out / "config.json", config.to_json().dump(2) + "\n");

  // Shared inputs first so workers only read them.
  std::vector<Trajectory> demos = load_or_generate_demos(config);
  for (RewardMode m : config.modes) prepare_keys(config, m, demos);

  std::vector<std::pair<RewardMode, std::uint64_t>> jobs;
  for (RewardMode m : config.modes)
    for (std::uint64_t s : config.seeds) jobs.emplace_back(m, s);
  std::vector<RunSummary> results(jobs.size());
  run_parallel(jobs.size(), config.workers, [&](std::size_t i) {
    results[i] = run_one(config, jobs[i].first, jobs[i].second);
  });

  std::vector<Curve> curves;
  std::string summary = "mode,seed,bc_success,final_success\n";
  for (RewardMode m : config.modes) {
    std::vector<TrainLog> logs;
    for (const RunSummary& r : results)
      if (r.mode == m) {
        logs.push_back(r.log);
        summary += mode_name(m) + "," + std::to_string(r.seed) + "," +
                   fmt(r.bc_success) + "," + fmt(r.final_success) + "\n";
      }
    curves.push_back(aggregate(mode_name(m), logs));
    write_curve_csv(curves.back(), config.out / ("curve_" + mode_name(m) + ".csv"));
  }
  write_text_atomic(config.out / "summary.csv", summary);
  write_text_atomic(config.out / "plot.svg", render_svg(curves));
  return results;
}

}  // namespace koi
