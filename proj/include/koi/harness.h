#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "koi/importance.h"
#include "koi/keystates.h"
#include "koi/learner.h"
#include "koi/semantic.h"
#include "koi/sim_env.h"
#include "koi/train.h"

namespace koi {

// Reward arms. fixed_interval is "without both modules"; uniform is the
// plain OT baseline.
enum class RewardMode {
  kKoi,
  kUniform,
  kSdmOnly,
  kMcmOnly,
  kFixedInterval,
  kUniformMotion,
};

const std::vector<RewardMode>& all_reward_modes();
std::string mode_name(RewardMode mode);
// Throws InvariantError for unknown names.
RewardMode parse_mode(const std::string& name);

struct ExperimentConfig {
  std::string task = "pick-place-2";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<RewardMode> modes{RewardMode::kKoi, RewardMode::kUniform};
  // Demos used for BC and as OT targets: seeds demo_seed_base + [0, demos).
  int demos = 5;
  std::uint64_t demo_seed_base = 0;
  std::string annotator = "scripted";  // or "vlm"
  int query_stride = kDefaultQueryStride;
  int grid_interval = 10;    // fixed_interval / mcm_only keys
  int motion_interval = 5;   // uniform_motion keys
  KeyWeightParams key_weights;
  BcConfig bc;
  OnlineConfig online;
  std::filesystem::path out = "runs";
  int workers = 1;

  // Desk-scale defaults for the pick-and-place tasks.
  ExperimentConfig();

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw FormatError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Key states for one demo under `mode`. Uniform yields no keys.
KeyStateSet extract_keystates(const Trajectory& demo, const TaskSpec& spec,
                              RewardMode mode, Annotator& annotator,
                              const ExperimentConfig& config);

// Multiples of `interval` inside (0, demo_len - 1), then demo_len - 1.
SemanticIndexSet interval_keys(int demo_len, int interval);
// Multiples of `interval` strictly inside each semantic interval.
MotionIndexSet uniform_motion_keys(const SemanticIndexSet& semantic,
                                   int interval);

ImportanceDistribution importance_for(RewardMode mode, const KeyStateSet& keys,
                                      const KeyWeightParams& params,
                                      int demo_len);

void save_keystates(const KeyStateSet& keys, RewardMode mode, int demo_len,
                    const std::filesystem::path& path);
KeyStateSet load_keystates(const std::filesystem::path& path);

// Per-run output layout under config.out.
std::filesystem::path run_dir(const ExperimentConfig& config, RewardMode mode,
                              std::uint64_t seed);

struct RunSummary {
  RewardMode mode = RewardMode::kKoi;
  std::uint64_t seed = 0;
  double bc_success = 0.0;
  double final_success = 0.0;
  bool finished = false;
  TrainLog log;
};

// Mean eval success over evaluations at or after 90% of total_steps.
double final_success(const TrainLog& log, std::int64_t total_steps);

std::vector<Trajectory> load_or_generate_demos(const ExperimentConfig& config);
Mlp pretrain_bc(const std::vector<Trajectory>& demos,
                const ExperimentConfig& config, std::uint64_t seed);
std::unique_ptr<Annotator> make_annotator(const ExperimentConfig& config,
                                          const TaskSpec& spec,
                                          const Trajectory& demo);

// BC then online training for one (mode, seed); writes metrics.csv,
// eval.csv and a checkpoint into run_dir. Resumes from the checkpoint when
// one exists.
RunSummary run_one(const ExperimentConfig& config, RewardMode mode,
                   std::uint64_t seed);

void write_metrics_csv(const TrainLog& log, const std::filesystem::path& path);
void write_eval_csv(const TrainLog& log, const std::filesystem::path& path);
TrainLog read_eval_csv(const std::filesystem::path& path);

struct CurvePoint {
  std::int64_t step = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct Curve {
  std::string label;
  std::vector<CurvePoint> points;
};

// Aligns per-seed eval series on their common steps.
Curve aggregate(const std::string& label, const std::vector<TrainLog>& runs);
void write_curve_csv(const Curve& curve, const std::filesystem::path& path);

// Success vs steps with a +-1 std band, and a std vs steps panel.
std::string render_svg(const std::vector<Curve>& curves);

// Runs jobs on up to `workers` threads; the first exception is rethrown
// after every started job finishes.
void run_parallel(std::size_t jobs, int workers,
                  const std::function<void(std::size_t)>& job);

// Every (mode, seed) in the config; writes per-mode aggregates, the
// summary CSV and plot.svg.
std::vector<RunSummary> run_experiment(const ExperimentConfig& config);

}  // namespace koi
